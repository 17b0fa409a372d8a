//! Waveform → log-mel front end.

mod mel;
mod stft;
pub mod synth;
mod wav;

pub use mel::{hz_to_mel, mel_center_frequencies, mel_filterbank, mel_to_hz};
pub use stft::{num_frames, stft_power};
pub use synth::{synth_waveform, ClassRecipe, Coloration, Envelope, SignalRecipe, SyntheticDomainSpec};
pub use wav::{read_wav, read_wav_resampled, resample_linear, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added to mel energies before the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub sample_rate_hz: u32,
    pub window_size: usize,
    pub hop_size: usize,
    pub mel_bins: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 44_100,
            window_size: 1024,
            hop_size: 320,
            mel_bins: 64,
            fmin_hz: 50.0,
            fmax_hz: 14_000.0,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 || self.hop_size == 0 || self.hop_size > self.window_size {
            return Err(Error::Config(format!(
                "need 0 < hop_size ({}) <= window_size ({}) and window_size >= 2",
                self.hop_size, self.window_size
            )));
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(Error::Config(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= nyquist ({nyquist})",
                self.fmin_hz, self.fmax_hz
            )));
        }
        if self.mel_bins < 2 {
            return Err(Error::Config(format!("mel_bins must be >= 2, got {}", self.mel_bins)));
        }
        Ok(())
    }

    pub fn fft_bins(&self) -> usize {
        self.window_size / 2 + 1
    }
}

/// `T×F` log-mel energies (time × mel bins).
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    frames: Tensor,
    config: DspConfig,
    source_id: String,
}

impl MelSpectrogram {
    pub fn from_frames(frames: Tensor, config: DspConfig, source_id: impl Into<String>) -> Result<Self> {
        frames.require_matrix("MelSpectrogram")?;
        if frames.cols() != config.mel_bins {
            return Err(Error::Dimension {
                op: "MelSpectrogram",
                lhs: frames.shape().to_vec(),
                rhs: vec![frames.rows(), config.mel_bins],
            });
        }
        if frames.rows() == 0 {
            return Err(Error::Input("spectrogram needs at least one frame".into()));
        }
        if !frames.all_finite() {
            return Err(Error::Input("spectrogram has non-finite entries".into()));
        }
        Ok(Self {
            frames,
            config,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn config(&self) -> &DspConfig {
        &self.config
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn mel_bins(&self) -> usize {
        self.frames.cols()
    }

    /// Content hash of the frame values; independent of `source_id`.
    pub fn content_digest(&self) -> [u8; 32] {
        crate::digest::f64s(self.frames.data())
    }
}

/// `ln(filterbank · power + 1e-10)` per frame.
pub fn log_mel_spectrogram(wave: &[f64], config: &DspConfig) -> Result<MelSpectrogram> {
    let power = stft_power(wave, config)?;
    let fb = mel_filterbank(config)?;
    let mel = power.matmul(&fb.transpose()?)?;
    let (rows, cols) = (mel.rows(), mel.cols());
    let logged = mel.into_data().into_iter().map(|v| (v + LOG_FLOOR).ln()).collect();
    MelSpectrogram::from_frames(Tensor::matrix(rows, cols, logged)?, config.clone(), "")
}
