//! Symmetric InfoNCE pretraining of the toy two-tower model.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::encode::{argmax, audio_features, audio_forward, text_forward};
use super::vocab::{tokenize, Vocabulary};
use super::weights::{init_weights, ModelDims, ModelWeights, Pooling};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::optim::{adamw_update, AdamHyper, AdamState};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub audio: MelSpectrogram,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub dims: ModelDims,
    pub pooling: Pooling,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Probability that a batch's captions get a shared random prompt row.
    pub prompt_rate: f64,
    /// Standard deviation of that row's entries.
    pub prompt_std: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::default(),
            pooling: Pooling::Mean,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            seed: 0,
            prompt_rate: 0.5,
            prompt_std: 0.05,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub weights: ModelWeights,
    /// Mean training-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Full-dataset loss over fixed in-order batches, before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// `(CE(S) + CE(Sᵀ)) / 2` with `S = A·Tᵀ / τ` and matched pairs on the diagonal.
pub fn infonce_loss<'t>(audio: Var<'t>, text: Var<'t>, temperature: f64) -> Result<Var<'t>> {
    let b = audio.shape()[0];
    if b < 2 {
        return Err(Error::Input(format!("contrastive batch needs >= 2 pairs, got {b}")));
    }
    let tape = audio.tape();
    let sim = audio.matmul(text.transpose()?)?.scale(1.0 / temperature);
    let eye = tape.constant(Tensor::identity(b));
    let a2t = sim.log_softmax_rows()?.mul_elem(eye)?.sum_all();
    let t2a = sim.transpose()?.log_softmax_rows()?.mul_elem(eye)?.sum_all();
    Ok(a2t.add(t2a)?.scale(-0.5 / b as f64))
}

struct Prepared {
    features: Tensor,
    token_ids: Vec<Vec<usize>>,
}

impl Prepared {
    fn rows(&self, idx: &[usize]) -> Tensor {
        let f = self.features.cols();
        let mut data = Vec::with_capacity(idx.len() * f);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        Tensor::matrix(idx.len(), f, data).expect("feature rows")
    }

    fn ids(&self, idx: &[usize]) -> Vec<Vec<usize>> {
        idx.iter().map(|&i| self.token_ids[i].clone()).collect()
    }
}

fn prepare(w: &ModelWeights, pairs: &[TrainingPair]) -> Result<Prepared> {
    let features = audio_features(w, pairs.iter().map(|p| (p.audio.frames().data(), p.audio.num_frames())))?;
    let token_ids = pairs.iter().map(|p| tokenize(&p.text, &w.vocab)).collect::<Vec<_>>();
    if let Some(i) = token_ids.iter().position(Vec::is_empty) {
        return Err(Error::Input(format!("pair {i} has an empty caption")));
    }
    Ok(Prepared { features, token_ids })
}

fn batch_loss_value(w: &ModelWeights, data: &Prepared, idx: &[usize]) -> Result<f64> {
    let tape = Tape::new();
    let a = audio_forward(&w.audio_vars(&tape, false), tape.constant(data.rows(idx)))?;
    let t = text_forward(&w.text_vars(&tape, false), None, &data.ids(idx))?;
    infonce_loss(a, t, w.temperature())?.value().item()
}

/// Mean InfoNCE over consecutive in-order batches (a trailing singleton is folded
/// into the previous batch).
pub fn dataset_loss(w: &ModelWeights, pairs: &[TrainingPair], batch_size: usize) -> Result<f64> {
    let data = prepare(w, pairs)?;
    let order: Vec<usize> = (0..pairs.len()).collect();
    let batches = make_batches(&order, batch_size)?;
    let mut total = 0.0;
    for b in &batches {
        total += batch_loss_value(w, &data, b)?;
    }
    Ok(total / batches.len() as f64)
}

fn make_batches(order: &[usize], batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Input(format!("batch size must be >= 2, got {batch_size}")));
    }
    if order.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 training pairs, got {}",
            order.len()
        )));
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    Ok(batches)
}

/// Per-bin mean and standard deviation of pooled features, used to
/// standardize audio input.
fn input_stats(w: &ModelWeights, pairs: &[TrainingPair]) -> Result<(Tensor, Tensor)> {
    let raw = audio_features(w, pairs.iter().map(|p| (p.audio.frames().data(), p.audio.num_frames())))?;
    let (n, f) = (raw.rows(), raw.cols());
    let mut mean = vec![0.0; f];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(raw.row(r)) {
            *m += v / n as f64;
        }
    }
    let mut var = vec![0.0; f];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(raw.row(r)).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    let std = var.into_iter().map(|v| v.sqrt().max(1e-3)).collect();
    Ok((Tensor::matrix(1, f, mean)?, Tensor::matrix(1, f, std)?))
}

const FROZEN: [&str; 3] = ["audio_shift", "audio_scale", "temperature"];

/// Trains every tensor except input standardization and temperature.
///
/// A fraction of batches pool a random row in front of every caption, shared
/// across the batch, so the text tower sees prompt rows of the size one
/// adaptation step produces.
pub fn contrastive_pretrain(pairs: &[TrainingPair], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if cfg.batch_size < 2 {
        return Err(Error::Input(format!("batch size must be >= 2, got {}", cfg.batch_size)));
    }
    let first = pairs
        .first()
        .ok_or_else(|| Error::Input("no training pairs".into()))?;
    let dsp = first.audio.config().clone();
    if let Some(bad) = pairs.iter().find(|p| p.audio.mel_bins() != dsp.mel_bins) {
        return Err(Error::Input(format!(
            "pair {:?} has {} mel bins, expected {}",
            bad.audio.source_id(),
            bad.audio.mel_bins(),
            dsp.mel_bins
        )));
    }
    let vocab = Vocabulary::from_texts(pairs.iter().map(|p| p.text.as_str()));
    let mut w = init_weights(cfg.seed, vocab, dsp, cfg.dims)?;
    w.pooling = cfg.pooling;
    let (shift, scale) = input_stats(&w, pairs)?;
    w.audio_shift = shift;
    w.audio_scale = scale;

    let data = prepare(&w, pairs)?;
    let initial_loss = dataset_loss(&w, pairs, cfg.batch_size)?;

    let hp = AdamHyper {
        learning_rate: cfg.learning_rate,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: cfg.weight_decay,
    };
    let mut states: Vec<AdamState> = w.tensors().iter().map(|(_, t)| AdamState::new(t.numel())).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::seeded(rng::mix(cfg.seed, epoch as u64)));
        let batches = make_batches(&order, cfg.batch_size)?;
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let mut r = rng::seeded(rng::mix(rng::mix(cfg.seed, epoch as u64), 0x70_0000 + b as u64));
            let prompt = (r.random::<f64>() < cfg.prompt_rate).then(|| {
                Tensor::matrix(1, cfg.dims.embed_dim, rng::gaussian_vec(&mut r, cfg.dims.embed_dim, cfg.prompt_std))
                    .expect("prompt shape")
            });
            let grads = {
                let tape = Tape::new();
                let prompt = prompt.map(|p| tape.constant(p));
                let tv = w.text_vars(&tape, true);
                let av = w.audio_vars(&tape, true);
                let a = audio_forward(&av, tape.constant(data.rows(idx)))?;
                let t = text_forward(&tv, prompt, &data.ids(idx))?;
                let loss = infonce_loss(a, t, w.temperature())?;
                total += loss.value().item()?;
                loss.backward()?;
                let by_name = [
                    ("token_embedding", tv.token_embedding),
                    ("text_w1", tv.w1),
                    ("text_b1", tv.b1),
                    ("text_w2", tv.w2),
                    ("text_b2", tv.b2),
                    ("text_proj", tv.proj),
                    ("audio_w1", av.w1),
                    ("audio_b1", av.b1),
                    ("audio_w2", av.w2),
                    ("audio_b2", av.b2),
                    ("audio_proj", av.proj),
                ];
                by_name
                    .into_iter()
                    .map(|(n, v)| (n, v.grad()))
                    .collect::<Vec<_>>()
            };
            for ((name, tensor), state) in w.tensors_mut().into_iter().zip(states.iter_mut()) {
                if FROZEN.contains(&name) {
                    continue;
                }
                let Some((_, Some(g))) = grads.iter().find(|(n, _)| *n == name) else {
                    continue;
                };
                adamw_update(tensor.data_mut(), g.data(), state, &hp)?;
            }
        }
        epoch_losses.push(total / batches.len() as f64);
    }

    let final_loss = dataset_loss(&w, pairs, cfg.batch_size)?;
    Ok(PretrainOutcome {
        weights: w,
        epoch_losses,
        initial_loss,
        final_loss,
    })
}

/// Fraction of clips whose nearest caption, among all distinct captions,
/// is their own. Chance level is `1 / distinct_captions`.
pub fn retrieval_accuracy(w: &ModelWeights, pairs: &[TrainingPair]) -> Result<(f64, usize)> {
    let mut captions: Vec<&str> = pairs.iter().map(|p| p.text.as_str()).collect();
    captions.sort_unstable();
    captions.dedup();
    let ids: Vec<Vec<usize>> = captions.iter().map(|c| tokenize(c, &w.vocab)).collect();

    let tape = Tape::new();
    let text = text_forward(&w.text_vars(&tape, false), None, &ids)?.transpose()?;
    let data = prepare(w, pairs)?;
    let audio = audio_forward(&w.audio_vars(&tape, false), tape.constant(data.features))?;
    let sims = audio.matmul(text)?.value();
    let correct = pairs
        .iter()
        .enumerate()
        .filter(|(i, p)| captions[argmax(sims.row(*i))] == p.text)
        .count();
    Ok((correct as f64 / pairs.len() as f64, captions.len()))
}
