//! Zero-shot baselines, few-example adaptation, view-count ablation and the
//! cross-domain grid.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bench::{LabeledDataset, LabeledExample};
use crate::adapt::{adapt, AdaptConfig};
use crate::digest;
use crate::error::{Error, Result};
use crate::model::{argmax, audio_encode_mels, class_logits, text_encode, ClassPromptSet, DomainVector, ModelWeights};
use crate::rng;
use crate::tensor::Tensor;

/// Fraction of examples whose un-augmented prediction matches the label.
pub fn evaluate_zero_shot(
    examples: &[LabeledExample],
    classes: &ClassPromptSet,
    w: &ModelWeights,
    dv: Option<&DomainVector>,
) -> Result<f64> {
    EncodedSet::new(examples, w)?.accuracy(classes, w, dv, None)
}

/// Audio embeddings of a test pool, computed once and reused across runs.
pub struct EncodedSet {
    labels: Vec<usize>,
    embeddings: Tensor,
}

impl EncodedSet {
    pub fn new(examples: &[LabeledExample], w: &ModelWeights) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Input("cannot evaluate an empty dataset".into()));
        }
        let mels: Vec<_> = examples.iter().map(|e| &e.mel).collect();
        Ok(Self {
            labels: examples.iter().map(|e| e.label).collect(),
            embeddings: audio_encode_mels(&mels, w)?,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Accuracy over all examples, or over those not listed in `exclude`.
    pub fn accuracy(
        &self,
        classes: &ClassPromptSet,
        w: &ModelWeights,
        dv: Option<&DomainVector>,
        exclude: Option<&[usize]>,
    ) -> Result<f64> {
        let u = text_encode(classes, dv, w)?;
        let probs = class_logits(&self.embeddings, &u, w)?;
        let mut scored = 0;
        let mut correct = 0;
        for (i, &label) in self.labels.iter().enumerate() {
            if exclude.is_some_and(|ex| ex.contains(&i)) {
                continue;
            }
            scored += 1;
            if argmax(probs.row(i)) == label {
                correct += 1;
            }
        }
        if scored == 0 {
            return Err(Error::Input("no examples left to score".into()));
        }
        Ok(correct as f64 / scored as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotEntry {
    pub domain: String,
    pub accuracy: f64,
    pub scored: usize,
}

/// Unadapted accuracy per domain on the full test pools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub weights_digest: String,
    pub seed: u64,
    pub domains: Vec<ZeroShotEntry>,
    pub mean: f64,
}

/// `seed` is the data seed the pools were generated with; it is only recorded.
pub fn zero_shot_report(domains: &[LabeledDataset], w: &ModelWeights, seed: u64) -> Result<ZeroShotReport> {
    let entries: Vec<ZeroShotEntry> = domains
        .iter()
        .map(|d| {
            Ok(ZeroShotEntry {
                domain: d.domain.clone(),
                accuracy: evaluate_zero_shot(&d.test, &class_set(d, w)?, w, None)?,
                scored: d.test.len(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ZeroShotReport {
        weights_digest: w.digest(),
        seed,
        mean: mean(&entries.iter().map(|e| e.accuracy).collect::<Vec<_>>()),
        domains: entries,
    })
}

fn class_set(data: &LabeledDataset, w: &ModelWeights) -> Result<ClassPromptSet> {
    ClassPromptSet::new(&data.class_names, &w.vocab)
}

/// Indices of the `k` unlabeled adaptation examples for one seed.
pub fn adaptation_indices(data: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > data.test.len() {
        return Err(Error::Input(format!(
            "need 1 <= k <= {} test examples in {:?}, got k = {k}",
            data.test.len(),
            data.domain
        )));
    }
    let mut r = rng::seeded(rng::mix(seed, digest::str_u64(&data.domain)));
    let mut picked = index::sample(&mut r, data.test.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Adapted domain vector for one seed and the examples it was adapted on.
pub fn adapt_on_seed(
    data: &LabeledDataset,
    k: usize,
    cfg: &AdaptConfig,
    w: &ModelWeights,
    seed: u64,
) -> Result<(DomainVector, Vec<usize>)> {
    let picked = adaptation_indices(data, k, seed)?;
    let audios: Vec<_> = picked.iter().map(|&i| data.test[i].mel.clone()).collect();
    let classes = class_set(data, w)?;
    let run_cfg = AdaptConfig { seed, ..cfg.clone() };
    Ok((adapt(&audios, &classes, w, &run_cfg)?.domain_vector, picked))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domain: String,
    pub k: usize,
    pub num_aug_views: usize,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    /// Adapted accuracy per seed, scored on the test pool minus the `k` examples.
    pub accuracies: Vec<f64>,
    /// Unadapted accuracy on the same scored subset, per seed.
    pub zero_shot: Vec<f64>,
    pub mean: f64,
    pub zero_shot_mean: f64,
    /// Examples scored per seed.
    pub scored: usize,
}

impl EvalReport {
    pub fn delta(&self) -> f64 {
        self.mean - self.zero_shot_mean
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Input("seed list is empty".into()));
    }
    Ok(())
}

/// Per seed: draw `k` unlabeled test clips, adapt on them, score the rest.
pub fn adapt_and_eval(
    data: &LabeledDataset,
    k: usize,
    cfg: &AdaptConfig,
    w: &ModelWeights,
    seeds: &[u64],
) -> Result<EvalReport> {
    check_seeds(seeds)?;
    cfg.validate()?;
    adaptation_indices(data, k, seeds[0])?;
    let encoded = EncodedSet::new(&data.test, w)?;
    adapt_and_eval_encoded(data, &encoded, k, cfg, w, seeds)
}

fn adapt_and_eval_encoded(
    data: &LabeledDataset,
    encoded: &EncodedSet,
    k: usize,
    cfg: &AdaptConfig,
    w: &ModelWeights,
    seeds: &[u64],
) -> Result<EvalReport> {
    let classes = class_set(data, w)?;
    let per_seed: Vec<(f64, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let (dv, picked) = adapt_on_seed(data, k, cfg, w, seed)?;
            let adapted = encoded.accuracy(&classes, w, Some(&dv), Some(&picked))?;
            let zs = encoded.accuracy(&classes, w, None, Some(&picked))?;
            Ok((adapted, zs))
        })
        .collect::<Result<_>>()?;
    let accuracies: Vec<f64> = per_seed.iter().map(|p| p.0).collect();
    let zero_shot: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
    Ok(EvalReport {
        domain: data.domain.clone(),
        k,
        num_aug_views: cfg.num_aug_views,
        config_digest: cfg.digest(),
        seeds: seeds.to_vec(),
        mean: mean(&accuracies),
        zero_shot_mean: mean(&zero_shot),
        accuracies,
        zero_shot,
        scored: data.test.len() - k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub domain: String,
    /// One report per view count, in the order requested.
    pub rows: Vec<EvalReport>,
}

/// One-example adaptation repeated for each augmented-view count.
pub fn ablate_augmentations(
    data: &LabeledDataset,
    view_counts: &[usize],
    cfg: &AdaptConfig,
    w: &ModelWeights,
    seeds: &[u64],
) -> Result<AblationReport> {
    if view_counts.is_empty() {
        return Err(Error::Input("no view counts to compare".into()));
    }
    if view_counts.contains(&0) {
        return Err(Error::Config("view count 0 leaves no augmented view".into()));
    }
    check_seeds(seeds)?;
    let encoded = EncodedSet::new(&data.test, w)?;
    let rows = view_counts
        .iter()
        .map(|&views| {
            let row_cfg = AdaptConfig {
                num_aug_views: views,
                ..cfg.clone()
            };
            row_cfg.validate()?;
            adapt_and_eval_encoded(data, &encoded, 1, &row_cfg, w, seeds)
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport {
        domain: data.domain.clone(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub source: String,
    pub target: String,
    pub in_domain: bool,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source: String,
    /// Adapted minus zero-shot accuracy on the source domain itself.
    pub in_domain_delta: f64,
    /// Mean of adapted minus zero-shot accuracy over the other domains.
    pub off_domain_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainGrid {
    pub domains: Vec<String>,
    pub seeds: Vec<u64>,
    pub config_digest: String,
    /// Unadapted accuracy per target on its full test pool.
    pub zero_shot: Vec<f64>,
    /// `cells[source][target]`.
    pub cells: Vec<Vec<GridCell>>,
    pub row_average: Vec<f64>,
    pub column_average: Vec<f64>,
    pub zero_shot_average: f64,
    pub summary: Vec<SourceSummary>,
}

/// Adapt on one clip of each source domain, evaluate on every target.
///
/// Diagonal cells exclude the adaptation clip from scoring, so they equal
/// [`adapt_and_eval`] with `k = 1`; off-diagonal cells score the full
/// target pool.
pub fn cross_domain_grid(
    domains: &[LabeledDataset],
    cfg: &AdaptConfig,
    w: &ModelWeights,
    seeds: &[u64],
) -> Result<CrossDomainGrid> {
    if domains.len() < 2 {
        return Err(Error::Input(format!(
            "cross-domain grid needs >= 2 domains, got {}",
            domains.len()
        )));
    }
    check_seeds(seeds)?;
    cfg.validate()?;
    let encoded: Vec<EncodedSet> = domains.iter().map(|d| EncodedSet::new(&d.test, w)).collect::<Result<_>>()?;
    let classes: Vec<ClassPromptSet> = domains.iter().map(|d| class_set(d, w)).collect::<Result<_>>()?;
    let zero_shot: Vec<f64> = encoded
        .iter()
        .zip(&classes)
        .map(|(e, c)| e.accuracy(c, w, None, None))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, u64)> = (0..domains.len())
        .flat_map(|s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    // accuracy on every target for each (source, seed), canonical order
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(s, seed)| {
            let (dv, picked) = adapt_on_seed(&domains[s], 1, cfg, w, seed)?;
            (0..domains.len())
                .map(|t| {
                    let exclude = (t == s).then_some(picked.as_slice());
                    encoded[t].accuracy(&classes[t], w, Some(&dv), exclude)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let n = domains.len();
    let cells: Vec<Vec<GridCell>> = (0..n)
        .map(|s| {
            (0..n)
                .map(|t| {
                    let per_seed: Vec<f64> = (0..seeds.len()).map(|j| results[s * seeds.len() + j][t]).collect();
                    GridCell {
                        source: domains[s].domain.clone(),
                        target: domains[t].domain.clone(),
                        in_domain: s == t,
                        mean: mean(&per_seed),
                        per_seed,
                    }
                })
                .collect()
        })
        .collect();
    let row_average = cells
        .iter()
        .map(|row| mean(&row.iter().map(|c| c.mean).collect::<Vec<_>>()))
        .collect();
    let column_average = (0..n)
        .map(|t| mean(&cells.iter().map(|row| row[t].mean).collect::<Vec<_>>()))
        .collect();
    let summary = (0..n)
        .map(|s| {
            let off: Vec<f64> = (0..n)
                .filter(|&t| t != s)
                .map(|t| cells[s][t].mean - zero_shot[t])
                .collect();
            SourceSummary {
                source: domains[s].domain.clone(),
                in_domain_delta: cells[s][s].mean - zero_shot[s],
                off_domain_delta: mean(&off),
            }
        })
        .collect();
    Ok(CrossDomainGrid {
        domains: domains.iter().map(|d| d.domain.clone()).collect(),
        seeds: seeds.to_vec(),
        config_digest: cfg.digest(),
        zero_shot_average: mean(&zero_shot),
        zero_shot,
        cells,
        row_average,
        column_average,
        summary,
    })
}
