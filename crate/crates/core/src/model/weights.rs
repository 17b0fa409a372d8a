use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Shared embedding width `d`.
    pub embed_dim: usize,
    /// Hidden width `h` of the audio perceptron.
    pub audio_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed_dim: 768,
            audio_hidden: 256,
        }
    }
}

/// How frames are reduced over time before the audio perceptron.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Plain time average; invariant to frame order.
    #[default]
    Mean,
    /// Weights rising linearly from 0.5 to 1.5 across the clip, so time
    /// reordering changes the embedding.
    PositionalRamp,
}

/// Frozen two-tower parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub vocab: Vocabulary,
    pub dsp: DspConfig,
    pub dims: ModelDims,
    pub pooling: Pooling,
    pub token_embedding: Tensor,
    pub text_w1: Tensor,
    pub text_b1: Tensor,
    pub text_w2: Tensor,
    pub text_b2: Tensor,
    pub text_proj: Tensor,
    /// Per-bin standardization of pooled log-mel features, fixed at pretraining.
    pub audio_shift: Tensor,
    pub audio_scale: Tensor,
    pub audio_w1: Tensor,
    pub audio_b1: Tensor,
    pub audio_w2: Tensor,
    pub audio_b2: Tensor,
    pub audio_proj: Tensor,
    /// `1×1`; logits are cosine similarities divided by this.
    pub temperature: Tensor,
}

impl ModelWeights {
    pub fn embed_dim(&self) -> usize {
        self.dims.embed_dim
    }

    pub fn mel_bins(&self) -> usize {
        self.dsp.mel_bins
    }

    pub fn temperature(&self) -> f64 {
        self.temperature.data()[0]
    }

    /// Tensors in canonical order (files, digests, optimizers).
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("token_embedding", &self.token_embedding),
            ("text_w1", &self.text_w1),
            ("text_b1", &self.text_b1),
            ("text_w2", &self.text_w2),
            ("text_b2", &self.text_b2),
            ("text_proj", &self.text_proj),
            ("audio_shift", &self.audio_shift),
            ("audio_scale", &self.audio_scale),
            ("audio_w1", &self.audio_w1),
            ("audio_b1", &self.audio_b1),
            ("audio_w2", &self.audio_w2),
            ("audio_b2", &self.audio_b2),
            ("audio_proj", &self.audio_proj),
            ("temperature", &self.temperature),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("token_embedding", &mut self.token_embedding),
            ("text_w1", &mut self.text_w1),
            ("text_b1", &mut self.text_b1),
            ("text_w2", &mut self.text_w2),
            ("text_b2", &mut self.text_b2),
            ("text_proj", &mut self.text_proj),
            ("audio_shift", &mut self.audio_shift),
            ("audio_scale", &mut self.audio_scale),
            ("audio_w1", &mut self.audio_w1),
            ("audio_b1", &mut self.audio_b1),
            ("audio_w2", &mut self.audio_w2),
            ("audio_b2", &mut self.audio_b2),
            ("audio_proj", &mut self.audio_proj),
            ("temperature", &mut self.temperature),
        ]
    }

    /// Expected shape of every tensor, derived from dims and vocabulary.
    pub fn expected_shapes(vocab_size: usize, mel_bins: usize, dims: ModelDims) -> Vec<(&'static str, Vec<usize>)> {
        let (d, h, f) = (dims.embed_dim, dims.audio_hidden, mel_bins);
        vec![
            ("token_embedding", vec![vocab_size, d]),
            ("text_w1", vec![d, d]),
            ("text_b1", vec![1, d]),
            ("text_w2", vec![d, d]),
            ("text_b2", vec![1, d]),
            ("text_proj", vec![d, d]),
            ("audio_shift", vec![1, f]),
            ("audio_scale", vec![1, f]),
            ("audio_w1", vec![f, h]),
            ("audio_b1", vec![1, h]),
            ("audio_w2", vec![h, d]),
            ("audio_b2", vec![1, d]),
            ("audio_proj", vec![d, d]),
            ("temperature", vec![1, 1]),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for ((name, t), (_, shape)) in self
            .tensors()
            .iter()
            .zip(Self::expected_shapes(self.vocab.len(), self.mel_bins(), self.dims))
        {
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension {
                    op: "ModelWeights::validate",
                    lhs: t.shape().to_vec(),
                    rhs: shape,
                });
            }
            if !t.all_finite() {
                return Err(Error::Input(format!("weight tensor {name} has non-finite entries")));
            }
        }
        if !(self.temperature() > 0.0) {
            return Err(Error::Input(format!(
                "temperature must be positive, got {}",
                self.temperature()
            )));
        }
        Ok(())
    }

    /// SHA-256 over every tensor value plus the vocabulary, as hex.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        for (name, t) in self.tensors() {
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&crate::digest::f64s(t.data()));
        }
        for tok in self.vocab.tokens() {
            bytes.extend_from_slice(tok.as_bytes());
            bytes.push(0);
        }
        crate::digest::bytes_hex(&bytes)
    }
}

/// Gaussian(0, 0.02) parameters; identity input standardization; temperature 0.07.
pub fn init_weights(seed: u64, vocab: Vocabulary, dsp: DspConfig, dims: ModelDims) -> Result<ModelWeights> {
    dsp.validate()?;
    if dims.embed_dim == 0 || dims.audio_hidden == 0 {
        return Err(Error::Config("embed_dim and audio_hidden must be positive".into()));
    }
    let shapes = ModelWeights::expected_shapes(vocab.len(), dsp.mel_bins, dims);
    let mut r = rng::seeded(seed);
    let mut make = |name: &str| -> Tensor {
        let shape = &shapes.iter().find(|(n, _)| *n == name).expect("known tensor").1;
        let n = shape.iter().product();
        Tensor::new(shape.clone(), rng::gaussian_vec(&mut r, n, INIT_STD)).expect("shape")
    };
    let token_embedding = make("token_embedding");
    let text_w1 = make("text_w1");
    let text_b1 = make("text_b1");
    let text_w2 = make("text_w2");
    let text_b2 = make("text_b2");
    let text_proj = make("text_proj");
    let audio_w1 = make("audio_w1");
    let audio_b1 = make("audio_b1");
    let audio_w2 = make("audio_w2");
    let audio_b2 = make("audio_b2");
    let audio_proj = make("audio_proj");
    let f = dsp.mel_bins;
    Ok(ModelWeights {
        vocab,
        dsp,
        dims,
        pooling: Pooling::Mean,
        token_embedding,
        text_w1,
        text_b1,
        text_w2,
        text_b2,
        text_proj,
        audio_shift: Tensor::zeros(&[1, f]),
        audio_scale: Tensor::full(&[1, f], 1.0),
        audio_w1,
        audio_b1,
        audio_w2,
        audio_b2,
        audio_proj,
        temperature: Tensor::full(&[1, 1], DEFAULT_TEMPERATURE),
    })
}

/// The learnable `k×d` soft prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainVector {
    value: Tensor,
}

impl DomainVector {
    /// Gaussian(0, 0.02) initialization.
    pub fn init(tokens: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if tokens < 1 {
            return Err(Error::Config("domain vector needs at least one token".into()));
        }
        let mut r = rng::seeded(seed);
        Self::from_tensor(Tensor::matrix(
            tokens,
            embed_dim,
            rng::gaussian_vec(&mut r, tokens * embed_dim, INIT_STD),
        )?)
    }

    pub fn from_tensor(value: Tensor) -> Result<Self> {
        value.require_matrix("DomainVector")?;
        if value.rows() < 1 {
            return Err(Error::Config("domain vector needs at least one token".into()));
        }
        Ok(Self { value })
    }

    pub fn zeros(tokens: usize, embed_dim: usize) -> Self {
        Self {
            value: Tensor::zeros(&[tokens.max(1), embed_dim]),
        }
    }

    pub fn tokens(&self) -> usize {
        self.value.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.value.cols()
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub(crate) fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }
}
