//! Test-time domain adaptation for contrastive audio-language models.
//!
//! A learnable domain vector is prepended to the class-prompt token
//! embeddings of a frozen two-tower model and tuned, without labels, to
//! minimize the self-entropy of the class distribution averaged over
//! augmented views of the test audio.
//!
//! Pipeline: [`dsp`] turns waveforms into log-mel spectrograms, [`augment`]
//! builds the masked/reordered view batch, [`model`] embeds audio and
//! prompted class names, [`adapt`] runs the entropy-minimization loop, and
//! [`harness`] wraps everything in reproducible benchmark protocols.

pub mod adapt;
pub mod augment;
pub mod cli;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod tensor;

pub(crate) mod digest;
pub(crate) mod rng;

pub use error::{Error, Result};
