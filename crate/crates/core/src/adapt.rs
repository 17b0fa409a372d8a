//! Test-time adaptation of the domain vector: average predictions over
//! augmented views, minimize their self-entropy, step with AdamW.

use serde::{Deserialize, Serialize};

use crate::augment::{build_augmented_batch, AugmentConfig};
use crate::digest;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::model::{
    argmax, audio_encode, audio_encode_mels, class_logits, class_probs, text_encode, text_encode_on, ClassPromptSet,
    DomainVector, ModelWeights,
};
use crate::optim::{adamw_update, AdamHyper};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

pub use crate::optim::AdamState;

/// Probabilities below this are clamped inside the entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// How several unlabeled examples share one adaptation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiExampleMode {
    /// One update per step on the mean of per-example entropies.
    #[default]
    Joint,
    /// One update per example per step, examples in canonical order.
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub weight_decay: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub num_aug_views: usize,
    pub seed: u64,
    /// Rows `k` of the domain vector.
    pub prompt_tokens: usize,
    pub mode: MultiExampleMode,
    /// Stripe and segment ranges; its view count is replaced by `num_aug_views`.
    pub augment: AugmentConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-2,
            steps: 1,
            weight_decay: 0.0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            num_aug_views: 50,
            seed: 0,
            prompt_tokens: 1,
            mode: MultiExampleMode::Joint,
            augment: AugmentConfig::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.prompt_tokens < 1 {
            return Err(Error::Config("prompt_tokens must be >= 1".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!("adam betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("adam_eps must be > 0 and weight_decay >= 0".into()));
        }
        self.augment_config().validate()
    }

    pub fn augment_config(&self) -> AugmentConfig {
        self.augment.clone().with_views(self.num_aug_views)
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// SHA-256 of the JSON form.
    pub fn digest(&self) -> String {
        digest::bytes_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Mean of the rows of an `M×N` probability matrix, `1×N`.
pub fn average_probs(p: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    Ok(tape.constant(p.clone()).mean_rows()?.value())
}

/// `−Σ p ln max(p, 1e-12)` on the tape, with the number of clamped entries.
pub fn self_entropy_var<'t>(p_avg: Var<'t>) -> Result<(Var<'t>, usize)> {
    let clamped = p_avg.with_value(|v| v.data().iter().filter(|&&x| x < PROB_FLOOR).count());
    let logp = p_avg.clamp_min(PROB_FLOOR).log_elem()?;
    Ok((p_avg.mul_elem(logp)?.sum_all().neg(), clamped))
}

/// Self-entropy of a `1×N` distribution and the number of clamped entries.
pub fn self_entropy(p_avg: &Tensor) -> Result<(f64, usize)> {
    let tape = Tape::new();
    let (h, clamped) = self_entropy_var(tape.constant(p_avg.clone()))?;
    Ok((h.value().item()?, clamped))
}

/// One AdamW update of the domain vector. A non-finite gradient is an error
/// and leaves both `dv` and `state` unchanged.
pub fn adamw_step(dv: &mut DomainVector, grad: &Tensor, state: &mut AdamState, cfg: &AdaptConfig) -> Result<()> {
    if grad.shape() != dv.value().shape() {
        return Err(Error::Dimension {
            op: "adamw_step",
            lhs: dv.value().shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    adamw_update(dv.value_mut().data_mut(), grad.data(), state, &cfg.hyper())
}

/// The adaptation loss as a function of the domain vector, with the
/// augmented views of every example fixed up front.
///
/// Examples are held in content-digest order so that the loss and its
/// gradient do not depend on the order the caller listed them in.
pub struct AdaptationObjective<'a> {
    classes: &'a ClassPromptSet,
    w: &'a ModelWeights,
    /// Frozen audio embeddings, `M×d` per example.
    embeddings: Vec<Tensor>,
    provenance_digests: Vec<String>,
    source_ids: Vec<String>,
}

/// Loss value, gradient w.r.t. the domain vector and clamp count.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Tensor,
    pub clamped: usize,
}

impl<'a> AdaptationObjective<'a> {
    pub fn new(
        audios: &[MelSpectrogram],
        classes: &'a ClassPromptSet,
        w: &'a ModelWeights,
        cfg: &AdaptConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if audios.is_empty() {
            return Err(Error::Input("adaptation needs at least one audio example".into()));
        }
        if classes.is_empty() {
            return Err(Error::Input("empty class set".into()));
        }
        if let Some(a) = audios.iter().find(|a| a.mel_bins() != w.mel_bins()) {
            return Err(Error::Input(format!(
                "audio {:?} has {} mel bins, model expects {}",
                a.source_id(),
                a.mel_bins(),
                w.mel_bins()
            )));
        }
        let mut keyed: Vec<([u8; 32], &MelSpectrogram)> = audios.iter().map(|a| (a.content_digest(), a)).collect();
        keyed.sort_by_key(|k| k.0);

        let aug = cfg.augment_config();
        let mut embeddings = Vec::with_capacity(keyed.len());
        let mut provenance_digests = Vec::with_capacity(keyed.len());
        let mut source_ids = Vec::with_capacity(keyed.len());
        for (key, mel) in keyed {
            let seed = rng::mix(cfg.seed, digest::leading_u64(&key));
            let batch = build_augmented_batch(mel, &aug, seed)?;
            embeddings.push(audio_encode(&batch, w)?);
            provenance_digests.push(batch.provenance_digest());
            source_ids.push(mel.source_id().to_string());
        }
        Ok(Self {
            classes,
            w,
            embeddings,
            provenance_digests,
            source_ids,
        })
    }

    pub fn num_examples(&self) -> usize {
        self.embeddings.len()
    }

    pub fn provenance_digests(&self) -> &[String] {
        &self.provenance_digests
    }

    /// Example source ids in canonical order.
    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    fn record<'t>(&self, tape: &'t Tape, dv: &Tensor, which: &[usize]) -> Result<(Var<'t>, Var<'t>, usize)> {
        let prompt = tape.param(dv.clone());
        let u = text_encode_on(tape, self.classes, Some(prompt), self.w)?;
        let mut total: Option<Var<'t>> = None;
        let mut clamped = 0;
        for &i in which {
            let v = tape.constant(self.embeddings[i].clone());
            let p_avg = class_probs(v, u, self.w.temperature())?.mean_rows()?;
            let (h, c) = self_entropy_var(p_avg)?;
            clamped += c;
            total = Some(match total {
                None => h,
                Some(acc) => acc.add(h)?,
            });
        }
        let loss = total
            .ok_or_else(|| Error::Input("no examples selected".into()))?
            .scale(1.0 / which.len() as f64);
        Ok((prompt, loss, clamped))
    }

    fn all(&self) -> Vec<usize> {
        (0..self.embeddings.len()).collect()
    }

    /// Mean self-entropy over all examples at `dv`.
    pub fn loss(&self, dv: &Tensor) -> Result<f64> {
        let tape = Tape::new();
        self.record(&tape, dv, &self.all())?.1.value().item()
    }

    pub fn loss_and_grad(&self, dv: &Tensor) -> Result<LossEval> {
        self.loss_and_grad_on(dv, &self.all())
    }

    /// Loss and gradient restricted to the examples at canonical positions `which`.
    pub fn loss_and_grad_on(&self, dv: &Tensor, which: &[usize]) -> Result<LossEval> {
        let tape = Tape::new();
        let (prompt, loss, clamped) = self.record(&tape, dv, which)?;
        loss.backward()?;
        Ok(LossEval {
            loss: loss.value().item()?,
            grad: prompt.grad().unwrap_or_else(|| Tensor::zeros(dv.shape())),
            clamped,
        })
    }

    /// Per-view class distributions for each example, `M×N` each.
    pub fn view_probs(&self, dv: &Tensor) -> Result<Vec<Tensor>> {
        let dv = DomainVector::from_tensor(dv.clone())?;
        let u = text_encode(self.classes, Some(&dv), self.w)?;
        self.embeddings
            .iter()
            .map(|v| class_logits(v, &u, self.w))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptResult {
    pub domain_vector: DomainVector,
    /// Loss at the start of each step, before its update.
    pub loss_trace: Vec<f64>,
    /// Entries clamped at the probability floor, per step.
    pub clamp_trace: Vec<usize>,
    /// Loss at the adapted domain vector.
    pub final_loss: f64,
    /// Per-example `M×N` view distributions before and after adaptation.
    pub probs_before: Vec<Tensor>,
    pub probs_after: Vec<Tensor>,
    pub provenance_digests: Vec<String>,
    pub config: AdaptConfig,
}

#[derive(Serialize, Deserialize)]
struct AdaptResultJson {
    domain_vector: Vec<Vec<f64>>,
    loss_trace: Vec<f64>,
    clamp_trace: Vec<usize>,
    final_loss: f64,
    config: AdaptConfig,
    provenance_digests: Vec<String>,
}

impl AdaptResult {
    pub fn to_json(&self) -> String {
        let dv = self.domain_vector.value();
        let out = AdaptResultJson {
            domain_vector: (0..dv.rows()).map(|r| dv.row(r).to_vec()).collect(),
            loss_trace: self.loss_trace.clone(),
            clamp_trace: self.clamp_trace.clone(),
            final_loss: self.final_loss,
            config: self.config.clone(),
            provenance_digests: self.provenance_digests.clone(),
        };
        serde_json::to_string_pretty(&out).expect("result serializes")
    }
}

/// Fresh domain vector from `cfg.seed`, then `cfg.steps` updates. The model
/// weights are only read.
pub fn adapt(
    audios: &[MelSpectrogram],
    classes: &ClassPromptSet,
    w: &ModelWeights,
    cfg: &AdaptConfig,
) -> Result<AdaptResult> {
    let objective = AdaptationObjective::new(audios, classes, w, cfg)?;
    let mut dv = DomainVector::init(cfg.prompt_tokens, w.embed_dim(), cfg.seed)?;
    let mut state = AdamState::new(dv.value().numel());
    let probs_before = objective.view_probs(dv.value())?;

    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let mut clamp_trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        match cfg.mode {
            MultiExampleMode::Joint => {
                let eval = objective.loss_and_grad(dv.value())?;
                loss_trace.push(eval.loss);
                clamp_trace.push(eval.clamped);
                adamw_step(&mut dv, &eval.grad, &mut state, cfg)?;
            }
            MultiExampleMode::Sequential => {
                loss_trace.push(objective.loss(dv.value())?);
                let mut clamped = 0;
                for i in 0..objective.num_examples() {
                    let eval = objective.loss_and_grad_on(dv.value(), &[i])?;
                    clamped += eval.clamped;
                    adamw_step(&mut dv, &eval.grad, &mut state, cfg)?;
                }
                clamp_trace.push(clamped);
            }
        }
    }

    Ok(AdaptResult {
        final_loss: objective.loss(dv.value())?,
        probs_after: objective.view_probs(dv.value())?,
        probs_before,
        provenance_digests: objective.provenance_digests().to_vec(),
        domain_vector: dv,
        loss_trace,
        clamp_trace,
        config: cfg.clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Classifies the un-augmented clip. Without `dv` no prompt rows are pooled.
pub fn zero_shot_classify(
    audio: &MelSpectrogram,
    classes: &ClassPromptSet,
    w: &ModelWeights,
    dv: Option<&DomainVector>,
) -> Result<Prediction> {
    let u = text_encode(classes, dv, w)?;
    let v = audio_encode_mels(&[audio], w)?;
    let probs = class_logits(&v, &u, w)?.into_data();
    Ok(Prediction {
        class: argmax(&probs),
        probs,
    })
}
