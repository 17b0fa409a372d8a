#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use ttada::dsp::{DspConfig, MelSpectrogram};
use ttada::model::{init_weights, ClassPromptSet, ModelDims, ModelWeights, Vocabulary};
use ttada::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let u = Uniform::new(lo, hi).unwrap();
    (0..n).map(|_| u.sample(r)).collect()
}

pub fn gaussian_vec(r: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let g = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| g.sample(r)).collect()
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, uniform_vec(r, rows * cols, -2.0, 2.0)).unwrap()
}

/// Small front end so toy spectrograms stay cheap.
pub fn toy_dsp(mel_bins: usize) -> DspConfig {
    DspConfig {
        sample_rate_hz: 16_000,
        window_size: 256,
        hop_size: 128,
        mel_bins,
        fmin_hz: 50.0,
        fmax_hz: 8_000.0,
    }
}

pub fn random_mel(r: &mut ChaCha8Rng, frames: usize, dsp: &DspConfig, id: &str) -> MelSpectrogram {
    let data = gaussian_vec(r, frames * dsp.mel_bins, 1.0);
    MelSpectrogram::from_frames(Tensor::matrix(frames, dsp.mel_bins, data).unwrap(), dsp.clone(), id).unwrap()
}

pub fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("class{c} sound")).collect()
}

/// Random weights scaled up from the init spread so predictions are not flat.
pub fn toy_model(seed: u64, classes: usize, embed_dim: usize, mel_bins: usize, scale: f64) -> (ModelWeights, ClassPromptSet) {
    let names = class_names(classes);
    let vocab = Vocabulary::from_texts(names.iter().map(String::as_str));
    let dims = ModelDims {
        embed_dim,
        audio_hidden: 12,
    };
    let mut w = init_weights(seed, vocab, toy_dsp(mel_bins), dims).unwrap();
    for (name, t) in w.tensors_mut() {
        if !matches!(name, "audio_shift" | "audio_scale" | "temperature") {
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    let set = ClassPromptSet::new(&names, &w.vocab).unwrap();
    (w, set)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// The first `domains` benchmark domains with short clips and small splits.
pub fn small_manifest(domains: usize, train: usize, test: usize) -> ttada::harness::Manifest {
    let mut m = ttada::harness::default_benchmark();
    m.domains.truncate(domains);
    for d in &mut m.domains {
        d.duration_s = 1.0;
        d.train_count = train;
        d.test_count = test;
    }
    m
}

pub mod fixture {
    use std::path::PathBuf;

    use ttada::dsp::{log_mel_spectrogram, read_wav_resampled, synth_waveform, write_wav, DspConfig, MelSpectrogram};
    use ttada::harness::pretraining_pairs;
    use ttada::model::{
        contrastive_pretrain, load_weights, save_weights, ClassPromptSet, ModelDims, ModelWeights, PretrainConfig,
    };

    pub const DOMAIN: &str = "tones";

    pub fn dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
    }

    pub fn weights_path() -> PathBuf {
        dir().join("toy.ttw")
    }

    pub fn clip_path() -> PathBuf {
        dir().join("clip.wav")
    }

    fn manifest() -> ttada::harness::Manifest {
        super::small_manifest(4, 32, 4)
    }

    /// Rebuilds both fixture files from seed 0.
    pub fn regenerate() {
        let pairs = pretraining_pairs(&manifest(), &DspConfig::default(), 0).unwrap();
        let cfg = PretrainConfig {
            dims: ModelDims {
                embed_dim: 32,
                audio_hidden: 64,
            },
            seed: 0,
            ..PretrainConfig::default()
        };
        let out = contrastive_pretrain(&pairs, &cfg).unwrap();
        std::fs::create_dir_all(dir()).unwrap();
        save_weights(&out.weights, weights_path()).unwrap();

        let m = manifest();
        let spec = m.domain(DOMAIN).unwrap();
        let wave = synth_waveform(spec, 0, 0).unwrap();
        write_wav(clip_path(), &wave, spec.sample_rate_hz).unwrap();
    }

    /// The committed toy model, the class set of the fixture domain and the fixture clip.
    pub fn load() -> (ModelWeights, ClassPromptSet, MelSpectrogram) {
        let w = load_weights(weights_path()).unwrap();
        let names = manifest().domain(DOMAIN).unwrap().class_names();
        let classes = ClassPromptSet::new(&names, &w.vocab).unwrap();
        let wave = read_wav_resampled(clip_path(), w.dsp.sample_rate_hz).unwrap();
        let mel = log_mel_spectrogram(&wave, &w.dsp).unwrap().with_source_id("fixture");
        (w, classes, mel)
    }
}

pub mod cli {
    use std::collections::BTreeMap;
    use std::path::{Path, PathBuf};
    use std::process::{Command, Output};

    use super::small_manifest;

    pub fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    pub fn ttada(args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ttada"))
            .args(args)
            .env_remove("TTADA_SEED")
            .output()
            .unwrap()
    }

    pub fn code(out: &Output) -> i32 {
        out.status.code().unwrap()
    }

    pub fn stderr(out: &Output) -> String {
        String::from_utf8_lossy(&out.stderr).into_owned()
    }

    pub fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect()
    }

    /// Runs every workflow into `out` against a small manifest.
    pub fn all_workflows(out: &Path, manifest: &Path) -> Vec<(String, i32)> {
        let weights = out.join("weights.ttw");
        let (m, o, w) = (s(manifest), s(out), s(&weights));
        let runs: Vec<Vec<&str>> = vec![
            vec!["pretrain", "--manifest", m, "--dim", "16", "--hidden", "16", "--epochs", "4", "--batch-size", "8"],
            vec!["zeroshot", "--manifest", m, "--weights", w],
            vec!["adapt", "--manifest", m, "--weights", w, "--k", "2", "--views", "6", "--runs", "2"],
            vec!["ablate", "--manifest", m, "--weights", w, "--counts", "3,6", "--runs", "2"],
            vec!["grid", "--manifest", m, "--weights", w, "--views", "4", "--runs", "2"],
            vec!["gradcheck", "--trials", "4"],
            vec!["augment-preview", "--manifest", m, "--views", "5"],
        ];
        runs.into_iter()
            .map(|mut args| {
                args.extend(["--seed", "11", "--out-dir", o]);
                let res = ttada(&args);
                (args[0].to_string(), code(&res))
            })
            .collect()
    }

    pub fn write_small_manifest(dir: &Path) -> PathBuf {
        let path = dir.join("manifest.json");
        small_manifest(3, 8, 5).save(&path).unwrap();
        path
    }
}
