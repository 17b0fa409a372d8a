//! Synthetic multi-domain benchmark: manifests, clip generation, pretraining pairs.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::dsp::{
    log_mel_spectrogram, resample_linear, synth_waveform, ClassRecipe, Coloration, DspConfig, Envelope,
    MelSpectrogram, SignalRecipe, SyntheticDomainSpec,
};
use crate::error::{Error, Result};
use crate::model::TrainingPair;
use crate::rng;

/// Domains to evaluate, plus the recording conditions used for pretraining clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub domains: Vec<SyntheticDomainSpec>,
    /// Recording conditions for pretraining clips, cycled in place of
    /// each domain's own so that every class meets every condition. Empty pretrains on the domains as they are.
    #[serde(default)]
    pub pretrain_conditions: Vec<Coloration>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Config("manifest lists no domains".into()));
        }
        for (i, d) in self.domains.iter().enumerate() {
            d.validate()?;
            if self.domains[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!("duplicate domain name {:?}", d.name)));
            }
        }
        Ok(())
    }

    pub fn domain(&self, name: &str) -> Result<&SyntheticDomainSpec> {
        self.domains
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Input(format!("no domain named {name:?} in manifest")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

const REGISTERS: [&str; 4] = ["low", "mid", "high", "top"];

fn classes(family: &str, make: impl Fn(f64) -> SignalRecipe) -> Vec<ClassRecipe> {
    REGISTERS
        .iter()
        .enumerate()
        .map(|(i, reg)| ClassRecipe {
            name: format!("{reg} {family}"),
            signal: make(2f64.powi(i as i32)),
        })
        .collect()
}

/// Four domains of four classes each, 40 test clips per domain, 3 s clips.
///
/// Every domain has its own recording conditions. Pretraining clips rotate
/// through a different set of conditions, so no domain is seen exactly as
/// it is evaluated.
pub fn default_benchmark() -> Manifest {
    let domain = |name: &str, classes, coloration| SyntheticDomainSpec {
        name: name.into(),
        classes,
        coloration,
        duration_s: 3.0,
        sample_rate_hz: 44_100,
        train_count: 80,
        test_count: 40,
    };
    Manifest {
        domains: vec![
            domain(
                "tones",
                classes("tone", |s| SignalRecipe::Tone { freq_hz: 220.0 * s }),
                Coloration {
                    noise_level: 0.05,
                    band_hz: Some([150.0, 5000.0]),
                    envelope: Envelope::Flat,
                },
            ),
            domain(
                "chirps",
                classes("chirp", |s| SignalRecipe::Chirp {
                    start_hz: 200.0 * s,
                    end_hz: 400.0 * s,
                }),
                Coloration {
                    noise_level: 0.02,
                    band_hz: None,
                    envelope: Envelope::Tremolo {
                        rate_hz: 2.0,
                        depth: 0.6,
                    },
                },
            ),
            domain(
                "noisebursts",
                classes("burst", |s| SignalRecipe::NoiseBurst {
                    center_hz: 500.0 * s,
                    bandwidth_hz: 200.0 * s,
                    bursts_per_sec: 4.0,
                }),
                Coloration {
                    noise_level: 0.01,
                    band_hz: None,
                    envelope: Envelope::Decay { per_sec: 0.5 },
                },
            ),
            domain(
                "am-tones",
                classes("hum", |s| SignalRecipe::AmTone {
                    carrier_hz: 300.0 * s,
                    mod_hz: 5.0,
                    depth: 0.8,
                }),
                Coloration {
                    noise_level: 0.03,
                    band_hz: Some([250.0, 4000.0]),
                    envelope: Envelope::Flat,
                },
            ),
        ],
        pretrain_conditions: vec![
            Coloration::clean(),
            Coloration {
                noise_level: 0.02,
                band_hz: None,
                envelope: Envelope::Flat,
            },
            Coloration {
                noise_level: 0.005,
                band_hz: Some([100.0, 8000.0]),
                envelope: Envelope::Tremolo {
                    rate_hz: 1.0,
                    depth: 0.4,
                },
            },
            Coloration {
                noise_level: 0.04,
                band_hz: Some([200.0, 3000.0]),
                envelope: Envelope::Decay { per_sec: 0.3 },
            },
        ],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub mel: MelSpectrogram,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub domain: String,
    pub class_names: Vec<String>,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Split {
    Train,
    Test,
}

fn clip(spec: &SyntheticDomainSpec, dsp: &DspConfig, seed: u64, split: Split, i: usize) -> Result<LabeledExample> {
    let label = i % spec.num_classes();
    let split_key = match split {
        Split::Train => 0x7261_696e,
        Split::Test => 0x7465_7374,
    };
    let clip_seed = rng::mix(rng::mix(seed, digest::str_u64(&spec.name)), rng::mix(split_key, i as u64));
    let mut wave = synth_waveform(spec, label, clip_seed)?;
    if spec.sample_rate_hz != dsp.sample_rate_hz {
        wave = resample_linear(&wave, spec.sample_rate_hz, dsp.sample_rate_hz);
    }
    let tag = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let mel = log_mel_spectrogram(&wave, dsp)?.with_source_id(format!("{}/{tag}/{i}", spec.name));
    Ok(LabeledExample { mel, label })
}

fn split(spec: &SyntheticDomainSpec, dsp: &DspConfig, seed: u64, which: Split, n: usize) -> Result<Vec<LabeledExample>> {
    (0..n).into_par_iter().map(|i| clip(spec, dsp, seed, which, i)).collect()
}

/// Labels are assigned round-robin; train and test clips use disjoint seeds.
pub fn generate_domain(spec: &SyntheticDomainSpec, dsp: &DspConfig, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    dsp.validate()?;
    Ok(LabeledDataset {
        domain: spec.name.clone(),
        class_names: spec.class_names(),
        train: split(spec, dsp, seed, Split::Train, spec.train_count)?,
        test: split(spec, dsp, seed, Split::Test, spec.test_count)?,
    })
}

/// Test splits only, one dataset per manifest domain.
pub fn generate_test_sets(manifest: &Manifest, dsp: &DspConfig, seed: u64) -> Result<Vec<LabeledDataset>> {
    manifest.validate()?;
    manifest
        .domains
        .iter()
        .map(|spec| {
            spec.validate()?;
            Ok(LabeledDataset {
                domain: spec.name.clone(),
                class_names: spec.class_names(),
                train: Vec::new(),
                test: split(spec, dsp, seed, Split::Test, spec.test_count)?,
            })
        })
        .collect()
}

/// Train-split clips of every domain captioned with their class name,
/// recorded under the manifest's pretraining conditions.
pub fn pretraining_pairs(manifest: &Manifest, dsp: &DspConfig, seed: u64) -> Result<Vec<TrainingPair>> {
    manifest.validate()?;
    let conditions = &manifest.pretrain_conditions;
    let mut pairs = Vec::new();
    for spec in &manifest.domains {
        let clips: Vec<LabeledExample> = (0..spec.train_count)
            .into_par_iter()
            .map(|i| {
                if conditions.is_empty() {
                    return clip(spec, dsp, seed, Split::Train, i);
                }
                // cycle per round of labels so every class meets every condition
                let mut shifted = spec.clone();
                shifted.coloration = conditions[(i / spec.num_classes()) % conditions.len()].clone();
                clip(&shifted, dsp, seed, Split::Train, i)
            })
            .collect::<Result<_>>()?;
        for ex in clips {
            pairs.push(TrainingPair {
                text: spec.classes[ex.label].name.clone(),
                audio: ex.mel,
            });
        }
    }
    Ok(pairs)
}
