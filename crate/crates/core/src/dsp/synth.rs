//! Deterministic class-conditional waveforms for the synthetic benchmark.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum SignalRecipe {
    Tone {
        freq_hz: f64,
    },
    Chirp {
        start_hz: f64,
        end_hz: f64,
    },
    NoiseBurst {
        center_hz: f64,
        bandwidth_hz: f64,
        bursts_per_sec: f64,
    },
    AmTone {
        carrier_hz: f64,
        mod_hz: f64,
        depth: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecipe {
    pub name: String,
    pub signal: SignalRecipe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Envelope {
    Flat,
    Decay { per_sec: f64 },
    Tremolo { rate_hz: f64, depth: f64 },
}

/// Recording conditions shared by every clip of a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coloration {
    /// Standard deviation of additive white noise.
    pub noise_level: f64,
    /// Second-order high-pass / low-pass corners, when present.
    pub band_hz: Option<[f64; 2]>,
    pub envelope: Envelope,
}

impl Coloration {
    pub fn clean() -> Self {
        Self {
            noise_level: 0.0,
            band_hz: None,
            envelope: Envelope::Flat,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomainSpec {
    pub name: String,
    pub classes: Vec<ClassRecipe>,
    pub coloration: Coloration,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub train_count: usize,
    pub test_count: usize,
}

impl SyntheticDomainSpec {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes() < 2 {
            return Err(Error::Config(format!(
                "domain {:?} needs at least 2 classes",
                self.name
            )));
        }
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                if a.signal == b.signal || a.name == b.name {
                    return Err(Error::Config(format!(
                        "domain {:?}: classes {:?} and {:?} are not distinct",
                        self.name, a.name, b.name
                    )));
                }
            }
        }
        if !(self.duration_s > 0.0) || self.sample_rate_hz == 0 {
            return Err(Error::Config(format!(
                "domain {:?}: duration and sample rate must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

/// Direct-form-I biquad (RBJ cookbook coefficients).
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn new(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    fn params(freq: f64, q: f64, rate: f64) -> (f64, f64) {
        let f = freq.clamp(1.0, 0.49 * rate);
        let w0 = 2.0 * PI * f / rate;
        (w0.cos(), w0.sin() / (2.0 * q))
    }

    fn lowpass(freq: f64, rate: f64) -> Self {
        let (cos, alpha) = Self::params(freq, std::f64::consts::FRAC_1_SQRT_2, rate);
        let b = [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0];
        Self::new(b, 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    fn highpass(freq: f64, rate: f64) -> Self {
        let (cos, alpha) = Self::params(freq, std::f64::consts::FRAC_1_SQRT_2, rate);
        let b = [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0];
        Self::new(b, 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    fn bandpass(center: f64, bandwidth: f64, rate: f64) -> Self {
        let q = (center / bandwidth.max(1.0)).max(0.1);
        let (cos, alpha) = Self::params(center, q, rate);
        Self::new([alpha, 0.0, -alpha], 1.0 + alpha, -2.0 * cos, 1.0 - alpha)
    }

    fn apply(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = *v;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// One clip of class `class_id`. Identical `(spec, class_id, seed)` give
/// bit-identical samples.
pub fn synth_waveform(spec: &SyntheticDomainSpec, class_id: usize, seed: u64) -> Result<Vec<f64>> {
    let recipe = spec.classes.get(class_id).ok_or_else(|| {
        Error::Input(format!(
            "class {class_id} out of range for domain {:?} with {} classes",
            spec.name,
            spec.num_classes()
        ))
    })?;
    let rate = spec.sample_rate_hz as f64;
    let n = spec.num_samples();
    let mut r = rng::seeded(rng::mix(seed, class_id as u64));

    let detune = 1.0 + r.random_range(-0.03..0.03);
    let amp = r.random_range(0.3..0.8);
    let phase = r.random_range(0.0..2.0 * PI);
    let t = |i: usize| i as f64 / rate;

    let mut x: Vec<f64> = match &recipe.signal {
        SignalRecipe::Tone { freq_hz } => {
            let f = freq_hz * detune;
            (0..n).map(|i| amp * (2.0 * PI * f * t(i) + phase).sin()).collect()
        }
        SignalRecipe::Chirp { start_hz, end_hz } => {
            let (f0, f1) = (start_hz * detune, end_hz * detune);
            let dur = spec.duration_s;
            (0..n)
                .map(|i| {
                    let ti = t(i);
                    amp * (2.0 * PI * (f0 * ti + (f1 - f0) * ti * ti / (2.0 * dur)) + phase).sin()
                })
                .collect()
        }
        SignalRecipe::NoiseBurst {
            center_hz,
            bandwidth_hz,
            bursts_per_sec,
        } => {
            let mut noise: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            Biquad::bandpass(center_hz * detune, *bandwidth_hz, rate).apply(&mut noise);
            let level = rms(&noise).max(1e-12);
            let period = 1.0 / bursts_per_sec.max(1e-3);
            let offset = r.random_range(0.0..period);
            noise
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let gate = if ((t(i) + offset) % period) < 0.5 * period { 1.0 } else { 0.0 };
                    amp * gate * v / (level * std::f64::consts::SQRT_2)
                })
                .collect()
        }
        SignalRecipe::AmTone {
            carrier_hz,
            mod_hz,
            depth,
        } => {
            let fc = carrier_hz * detune;
            (0..n)
                .map(|i| {
                    let m = (1.0 + depth * (2.0 * PI * mod_hz * t(i)).sin()) / (1.0 + depth);
                    amp * m * (2.0 * PI * fc * t(i) + phase).sin()
                })
                .collect()
        }
    };

    let color = &spec.coloration;
    match color.envelope {
        Envelope::Flat => {}
        Envelope::Decay { per_sec } => {
            for (i, v) in x.iter_mut().enumerate() {
                *v *= (-per_sec * t(i)).exp();
            }
        }
        Envelope::Tremolo { rate_hz, depth } => {
            for (i, v) in x.iter_mut().enumerate() {
                *v *= 1.0 - 0.5 * depth + 0.5 * depth * (2.0 * PI * rate_hz * t(i)).sin();
            }
        }
    }
    if color.noise_level > 0.0 {
        let normal = rng::gaussian_vec(&mut r, n, color.noise_level);
        for (v, e) in x.iter_mut().zip(normal) {
            *v += e;
        }
    }
    if let Some([lo, hi]) = color.band_hz {
        Biquad::highpass(lo, rate).apply(&mut x);
        Biquad::lowpass(hi, rate).apply(&mut x);
    }
    Ok(x)
}
