use super::vocab::ClassPromptSet;
use super::weights::{DomainVector, ModelWeights, Pooling};
use crate::augment::AugmentedBatch;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Text-tower parameters recorded on a tape.
pub struct TextVars<'t> {
    pub token_embedding: Var<'t>,
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
    pub proj: Var<'t>,
}

/// Audio-tower parameters recorded on a tape.
pub struct AudioVars<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
    pub proj: Var<'t>,
}

impl ModelWeights {
    pub fn text_vars<'t>(&self, tape: &'t Tape, trainable: bool) -> TextVars<'t> {
        let leaf = |t: &Tensor| tape.leaf(t.clone(), trainable);
        TextVars {
            token_embedding: leaf(&self.token_embedding),
            w1: leaf(&self.text_w1),
            b1: leaf(&self.text_b1),
            w2: leaf(&self.text_w2),
            b2: leaf(&self.text_b2),
            proj: leaf(&self.text_proj),
        }
    }

    pub fn audio_vars<'t>(&self, tape: &'t Tape, trainable: bool) -> AudioVars<'t> {
        let leaf = |t: &Tensor| tape.leaf(t.clone(), trainable);
        AudioVars {
            w1: leaf(&self.audio_w1),
            b1: leaf(&self.audio_b1),
            w2: leaf(&self.audio_w2),
            b2: leaf(&self.audio_b2),
            proj: leaf(&self.audio_proj),
        }
    }
}

/// Per class: gather token rows, prepend the prompt rows, mean-pool, then
/// `tanh` perceptron and projection; returns unit rows, `N×d`.
pub fn text_forward<'t>(vars: &TextVars<'t>, prompt: Option<Var<'t>>, classes: &[Vec<usize>]) -> Result<Var<'t>> {
    if classes.is_empty() {
        return Err(Error::Input("text encoder needs at least one class".into()));
    }
    let mut stacked: Option<Var<'t>> = None;
    for ids in classes {
        let mut rows = vars.token_embedding.gather_rows(ids)?;
        if let Some(p) = prompt {
            rows = p.concat_rows(rows)?;
        }
        let pooled = rows.mean_rows()?;
        stacked = Some(match stacked {
            None => pooled,
            Some(acc) => acc.concat_rows(pooled)?,
        });
    }
    let x = stacked.expect("non-empty");
    let hidden = x.matmul(vars.w1)?.add_row_bias(vars.b1)?.tanh();
    let out = hidden.matmul(vars.w2)?.add_row_bias(vars.b2)?;
    out.matmul(vars.proj)?.l2_normalize_rows()
}

/// Standardized features `M×F` → unit audio embeddings `M×d`.
pub fn audio_forward<'t>(vars: &AudioVars<'t>, features: Var<'t>) -> Result<Var<'t>> {
    let hidden = features.matmul(vars.w1)?.add_row_bias(vars.b1)?.tanh();
    let out = hidden.matmul(vars.w2)?.add_row_bias(vars.b2)?;
    out.matmul(vars.proj)?.l2_normalize_rows()
}

/// Reduces a `T×F` view over time.
pub fn pool_frames(view: &[f64], frames: usize, bins: usize, pooling: Pooling) -> Vec<f64> {
    let mut acc = vec![0.0; bins];
    for (t, row) in view.chunks(bins).take(frames).enumerate() {
        let weight = match pooling {
            Pooling::Mean => 1.0,
            Pooling::PositionalRamp if frames > 1 => 0.5 + t as f64 / (frames - 1) as f64,
            Pooling::PositionalRamp => 1.0,
        };
        for (a, v) in acc.iter_mut().zip(row) {
            *a += weight * v;
        }
    }
    let inv = 1.0 / frames as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Pooled and standardized audio features for a set of `T×F` views.
pub fn audio_features<'a>(
    w: &ModelWeights,
    views: impl IntoIterator<Item = (&'a [f64], usize)>,
) -> Result<Tensor> {
    let f = w.mel_bins();
    let shift = w.audio_shift.data();
    let scale = w.audio_scale.data();
    let mut rows = 0;
    let mut data = Vec::new();
    for (view, frames) in views {
        if frames == 0 || view.len() != frames * f {
            return Err(Error::Dimension {
                op: "audio_features",
                lhs: vec![frames, view.len() / frames.max(1)],
                rhs: vec![frames, f],
            });
        }
        let pooled = pool_frames(view, frames, f, w.pooling);
        data.extend(pooled.iter().zip(shift).zip(scale).map(|((p, s), c)| (p - s) / c));
        rows += 1;
    }
    Tensor::matrix(rows, f, data)
}

/// Text embeddings `d×N` on `tape`; differentiable through `prompt` only
/// (the text weights are recorded as constants).
pub fn text_encode_on<'t>(
    tape: &'t Tape,
    classes: &ClassPromptSet,
    prompt: Option<Var<'t>>,
    w: &ModelWeights,
) -> Result<Var<'t>> {
    if classes.is_empty() {
        return Err(Error::Input("empty class list".into()));
    }
    if let Some(p) = prompt {
        let shape = p.shape();
        if shape.len() != 2 || shape[1] != w.embed_dim() {
            return Err(Error::Dimension {
                op: "text_encode",
                lhs: shape,
                rhs: vec![0, w.embed_dim()],
            });
        }
    }
    let vars = w.text_vars(tape, false);
    text_forward(&vars, prompt, classes.token_ids())?.transpose()
}

/// Text embeddings `d×N`. With `dv == None` no prompt rows are pooled.
pub fn text_encode(classes: &ClassPromptSet, dv: Option<&DomainVector>, w: &ModelWeights) -> Result<Tensor> {
    let tape = Tape::new();
    let prompt = dv.map(|d| tape.constant(d.value().clone()));
    Ok(text_encode_on(&tape, classes, prompt, w)?.value())
}

fn embed_features(features: Tensor, w: &ModelWeights) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = w.audio_vars(&tape, false);
    Ok(audio_forward(&vars, tape.constant(features))?.value())
}

/// Unit audio embeddings `M×d`, one per view. No gradients.
pub fn audio_encode(batch: &AugmentedBatch, w: &ModelWeights) -> Result<Tensor> {
    let frames = batch.frames();
    let features = audio_features(w, (0..batch.num_views()).map(|i| (batch.view_data(i), frames)))?;
    embed_features(features, w)
}

/// Unit audio embeddings for un-augmented spectrograms, one row each.
pub fn audio_encode_mels(mels: &[&MelSpectrogram], w: &ModelWeights) -> Result<Tensor> {
    let features = audio_features(w, mels.iter().map(|m| (m.frames().data(), m.num_frames())))?;
    embed_features(features, w)
}

/// `softmax_rows(v·u / τ)` on the tape.
pub fn class_probs<'t>(v: Var<'t>, u: Var<'t>, temperature: f64) -> Result<Var<'t>> {
    v.matmul(u)?.scale(1.0 / temperature).softmax_rows()
}

/// Class distribution per audio embedding row, `M×N`.
pub fn class_logits(v: &Tensor, u: &Tensor, w: &ModelWeights) -> Result<Tensor> {
    let tape = Tape::new();
    Ok(class_probs(tape.constant(v.clone()), tape.constant(u.clone()), w.temperature())?.value())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
