//! Sweep comparing the adaptation gradient against central differences.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptConfig, AdaptationObjective};
use crate::dsp::{DspConfig, MelSpectrogram};
use crate::error::Result;
use crate::model::{init_weights, ClassPromptSet, ModelDims, ModelWeights, Vocabulary};
use crate::rng;
use crate::tensor::{finite_diff_grad, max_rel_err, Tensor};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

const VIEW_CHOICES: [usize; 3] = [3, 5, 11];
const CLASS_CHOICES: [usize; 3] = [2, 4, 7];
const DIM_CHOICES: [usize; 2] = [8, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckTrial {
    /// Views per example, original included.
    pub views: usize,
    pub classes: usize,
    pub embed_dim: usize,
    pub prompt_tokens: usize,
    pub examples: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    pub trials: Vec<GradcheckTrial>,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn toy_dsp(mel_bins: usize) -> DspConfig {
    DspConfig {
        sample_rate_hz: 16_000,
        window_size: 256,
        hop_size: 128,
        mel_bins,
        fmin_hz: 50.0,
        fmax_hz: 8_000.0,
    }
}

/// Random weights at unit-ish scale, so logits are far from flat.
fn toy_model(seed: u64, classes: usize, dims: ModelDims, mel_bins: usize) -> Result<(ModelWeights, ClassPromptSet)> {
    let names: Vec<String> = (0..classes).map(|c| format!("class{c} sound")).collect();
    let vocab = Vocabulary::from_texts(names.iter().map(String::as_str));
    let mut w = init_weights(seed, vocab, toy_dsp(mel_bins), dims)?;
    for (name, t) in w.tensors_mut() {
        if !matches!(name, "audio_shift" | "audio_scale" | "temperature") {
            t.data_mut().iter_mut().for_each(|v| *v *= 25.0);
        }
    }
    let set = ClassPromptSet::new(&names, &w.vocab)?;
    Ok((w, set))
}

fn run_trial(seed: u64, index: usize) -> Result<GradcheckTrial> {
    let trial_seed = rng::mix(seed, index as u64);
    let mut r = rng::seeded(trial_seed);
    // the first 18 trials walk the full M × N × d product
    let (views, classes, embed_dim) = if index < 18 {
        (VIEW_CHOICES[index % 3], CLASS_CHOICES[(index / 3) % 3], DIM_CHOICES[(index / 9) % 2])
    } else {
        (
            VIEW_CHOICES[r.random_range(0..3)],
            CLASS_CHOICES[r.random_range(0..3)],
            DIM_CHOICES[r.random_range(0..2)],
        )
    };
    let prompt_tokens = r.random_range(1..=2);
    let examples = r.random_range(1..=2);
    let mel_bins = 8;
    let frames = 24;
    let dims = ModelDims {
        embed_dim,
        audio_hidden: 6,
    };
    let (w, set) = toy_model(trial_seed, classes, dims, mel_bins)?;
    let audios: Vec<MelSpectrogram> = (0..examples)
        .map(|e| {
            let data = rng::gaussian_vec(&mut r, frames * mel_bins, 1.0);
            MelSpectrogram::from_frames(Tensor::matrix(frames, mel_bins, data)?, w.dsp.clone(), format!("probe/{e}"))
        })
        .collect::<Result<_>>()?;
    let cfg = AdaptConfig {
        num_aug_views: views - 1,
        prompt_tokens,
        seed: trial_seed,
        ..AdaptConfig::default()
    };
    let objective = AdaptationObjective::new(&audios, &set, &w, &cfg)?;
    let dv = Tensor::matrix(prompt_tokens, embed_dim, rng::gaussian_vec(&mut r, prompt_tokens * embed_dim, 0.5))?;
    let analytic = objective.loss_and_grad(&dv)?.grad;
    let numeric = finite_diff_grad(|x| objective.loss(x), &dv, GRADCHECK_EPS)?;
    Ok(GradcheckTrial {
        views,
        classes,
        embed_dim,
        prompt_tokens,
        examples,
        max_rel_err: max_rel_err(&analytic, &numeric),
    })
}

/// `trials` random configurations; the first 18 cover every
/// (views, classes, width) combination.
pub fn gradcheck_sweep(trials: usize, seed: u64) -> Result<GradcheckReport> {
    let trials: Vec<GradcheckTrial> = (0..trials).into_par_iter().map(|i| run_trial(seed, i)).collect::<Result<_>>()?;
    let max = trials.iter().fold(0.0_f64, |m, t| m.max(t.max_rel_err));
    Ok(GradcheckReport {
        seed,
        eps: GRADCHECK_EPS,
        tolerance: GRADCHECK_TOLERANCE,
        trials,
        max_rel_err: max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweep_passes() {
        let report = gradcheck_sweep(3, 11).unwrap();
        assert_eq!(report.trials.len(), 3);
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn sweep_is_deterministic() {
        assert_eq!(gradcheck_sweep(2, 5).unwrap(), gradcheck_sweep(2, 5).unwrap());
    }
}
