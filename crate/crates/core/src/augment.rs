//! Masking and reordering views of a log-mel spectrogram.
//!
//! A batch holds `num_aug_views` augmented views, cycling time masking,
//! frequency masking, time+frequency masking and time reordering, followed
//! by the untouched original. Each view draws from its own `(seed, index)`
//! random stream and records everything it sampled, so any view can be
//! replayed from its [`ViewProvenance`] alone.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Inclusive integer range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub low: usize,
    pub high: usize,
}

impl IntRange {
    pub const fn new(low: usize, high: usize) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, v: usize) -> bool {
        (self.low..=self.high).contains(&v)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.low..=self.high)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub tm_width: IntRange,
    pub tm_stripes: IntRange,
    pub fm_width: IntRange,
    pub fm_stripes: IntRange,
    pub tr_segments: IntRange,
    pub num_aug_views: usize,
    pub mask_fill: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            tm_width: IntRange::new(2, 128),
            tm_stripes: IntRange::new(2, 24),
            fm_width: IntRange::new(2, 32),
            fm_stripes: IntRange::new(2, 24),
            tr_segments: IntRange::new(2, 8),
            num_aug_views: 50,
            mask_fill: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn with_views(mut self, num_aug_views: usize) -> Self {
        self.num_aug_views = num_aug_views;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("tm_width", self.tm_width),
            ("tm_stripes", self.tm_stripes),
            ("fm_width", self.fm_width),
            ("fm_stripes", self.fm_stripes),
            ("tr_segments", self.tr_segments),
        ];
        for (name, r) in ranges {
            if r.low < 1 || r.low > r.high {
                return Err(Error::Config(format!(
                    "{name} range [{}, {}] must satisfy 1 <= low <= high",
                    r.low, r.high
                )));
            }
        }
        if self.num_aug_views < 1 {
            return Err(Error::Config("num_aug_views must be >= 1".into()));
        }
        if !self.mask_fill.is_finite() {
            return Err(Error::Config("mask_fill must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "TM")]
    TimeMask,
    #[serde(rename = "FM")]
    FreqMask,
    #[serde(rename = "TFM")]
    TimeFreqMask,
    #[serde(rename = "TR")]
    TimeReorder,
    #[serde(rename = "original")]
    Original,
}

impl Strategy {
    /// Round-robin schedule for augmented view `index`.
    pub fn for_view(index: usize) -> Self {
        const CYCLE: [Strategy; 4] = [
            Strategy::TimeMask,
            Strategy::FreqMask,
            Strategy::TimeFreqMask,
            Strategy::TimeReorder,
        ];
        CYCLE[index % 4]
    }
}

/// A masked band `[start, start + width)` along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stripe {
    pub start: usize,
    pub width: usize,
}

impl Stripe {
    pub fn contains(&self, i: usize) -> bool {
        i >= self.start && i < self.start + self.width
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentParams {
    TimeMask {
        stripes: Vec<Stripe>,
    },
    FreqMask {
        stripes: Vec<Stripe>,
    },
    TimeFreqMask {
        time: Vec<Stripe>,
        freq: Vec<Stripe>,
    },
    /// Segment `i` spans `[bounds[i], bounds[i+1])`; output segment `j` is
    /// input segment `permutation[j]`.
    TimeReorder {
        bounds: Vec<usize>,
        permutation: Vec<usize>,
    },
    Original,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewProvenance {
    pub index: usize,
    pub strategy: Strategy,
    pub params: AugmentParams,
    /// RNG stream id under the batch seed; `None` for the original.
    pub substream: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedBatch {
    views: Tensor,
    provenance: Vec<ViewProvenance>,
    original_index: usize,
    seed: u64,
    mask_fill: f64,
}

impl AugmentedBatch {
    pub fn num_views(&self) -> usize {
        self.views.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.views.shape()[1]
    }

    pub fn mel_bins(&self) -> usize {
        self.views.shape()[2]
    }

    /// `M×T×F` block of all views.
    pub fn views(&self) -> &Tensor {
        &self.views
    }

    pub fn view_data(&self, i: usize) -> &[f64] {
        let n = self.frames() * self.mel_bins();
        &self.views.data()[i * n..(i + 1) * n]
    }

    pub fn view(&self, i: usize) -> Tensor {
        Tensor::matrix(self.frames(), self.mel_bins(), self.view_data(i).to_vec())
            .expect("view shape")
    }

    pub fn provenance(&self) -> &[ViewProvenance] {
        &self.provenance
    }

    pub fn original_index(&self) -> usize {
        self.original_index
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mask_fill(&self) -> f64 {
        self.mask_fill
    }

    /// SHA-256 over the serialized provenance records.
    pub fn provenance_digest(&self) -> String {
        let json = serde_json::to_vec(&self.provenance).expect("provenance serializes");
        crate::digest::bytes_hex(&json)
    }
}

fn sample_stripes<R: Rng + ?Sized>(
    rng: &mut R,
    axis_len: usize,
    count: IntRange,
    width: IntRange,
) -> Vec<Stripe> {
    let n = count.sample(rng);
    (0..n)
        .map(|_| {
            let w = width.sample(rng).min(axis_len);
            let start = rng.random_range(0..=axis_len - w);
            Stripe { start, width: w }
        })
        .collect()
}

/// Sets every frequency bin of the listed time frames to `fill`.
pub fn apply_time_stripes(x: &Tensor, stripes: &[Stripe], fill: f64) -> Tensor {
    let mut out = x.clone();
    let f = x.cols();
    let data = out.data_mut();
    for s in stripes {
        data[s.start * f..(s.start + s.width) * f].fill(fill);
    }
    out
}

/// Sets the listed mel bins of every frame to `fill`.
pub fn apply_freq_stripes(x: &Tensor, stripes: &[Stripe], fill: f64) -> Tensor {
    let mut out = x.clone();
    let f = x.cols();
    for row in out.data_mut().chunks_mut(f) {
        for s in stripes {
            row[s.start..s.start + s.width].fill(fill);
        }
    }
    out
}

/// Concatenates segments of `x` in `permutation` order.
pub fn apply_reorder(x: &Tensor, bounds: &[usize], permutation: &[usize]) -> Tensor {
    let f = x.cols();
    let mut data = Vec::with_capacity(x.numel());
    for &seg in permutation {
        data.extend_from_slice(&x.data()[bounds[seg] * f..bounds[seg + 1] * f]);
    }
    Tensor::matrix(x.rows(), f, data).expect("reorder preserves shape")
}

/// Undoes [`apply_reorder`] given the same recorded parameters.
pub fn invert_reorder(y: &Tensor, bounds: &[usize], permutation: &[usize]) -> Tensor {
    let f = y.cols();
    let mut out = vec![0.0; y.numel()];
    let mut cursor = 0;
    for &seg in permutation {
        let len = (bounds[seg + 1] - bounds[seg]) * f;
        out[bounds[seg] * f..bounds[seg] * f + len].copy_from_slice(&y.data()[cursor..cursor + len]);
        cursor += len;
    }
    Tensor::matrix(y.rows(), f, out).expect("reorder preserves shape")
}

/// Rebuilds a view from its recorded parameters.
pub fn replay(x: &Tensor, params: &AugmentParams, fill: f64) -> Tensor {
    match params {
        AugmentParams::TimeMask { stripes } => apply_time_stripes(x, stripes, fill),
        AugmentParams::FreqMask { stripes } => apply_freq_stripes(x, stripes, fill),
        AugmentParams::TimeFreqMask { time, freq } => {
            apply_freq_stripes(&apply_time_stripes(x, time, fill), freq, fill)
        }
        AugmentParams::TimeReorder {
            bounds,
            permutation,
        } => apply_reorder(x, bounds, permutation),
        AugmentParams::Original => x.clone(),
    }
}

fn require_axis(len: usize, axis: &str) -> Result<()> {
    if len < 2 {
        return Err(Error::Input(format!("{axis} axis has length {len}, need >= 2")));
    }
    Ok(())
}

pub fn time_mask<R: Rng + ?Sized>(
    x: &MelSpectrogram,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor, AugmentParams)> {
    require_axis(x.num_frames(), "time")?;
    let stripes = sample_stripes(rng, x.num_frames(), cfg.tm_stripes, cfg.tm_width);
    let view = apply_time_stripes(x.frames(), &stripes, cfg.mask_fill);
    Ok((view, AugmentParams::TimeMask { stripes }))
}

pub fn freq_mask<R: Rng + ?Sized>(
    x: &MelSpectrogram,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor, AugmentParams)> {
    require_axis(x.mel_bins(), "frequency")?;
    let stripes = sample_stripes(rng, x.mel_bins(), cfg.fm_stripes, cfg.fm_width);
    let view = apply_freq_stripes(x.frames(), &stripes, cfg.mask_fill);
    Ok((view, AugmentParams::FreqMask { stripes }))
}

/// Time masking followed by frequency masking.
pub fn time_freq_mask<R: Rng + ?Sized>(
    x: &MelSpectrogram,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor, AugmentParams)> {
    require_axis(x.num_frames(), "time")?;
    require_axis(x.mel_bins(), "frequency")?;
    let time = sample_stripes(rng, x.num_frames(), cfg.tm_stripes, cfg.tm_width);
    let freq = sample_stripes(rng, x.mel_bins(), cfg.fm_stripes, cfg.fm_width);
    let view = apply_freq_stripes(
        &apply_time_stripes(x.frames(), &time, cfg.mask_fill),
        &freq,
        cfg.mask_fill,
    );
    Ok((view, AugmentParams::TimeFreqMask { time, freq }))
}

/// Splits the time axis at sorted distinct cut points and permutes the segments.
pub fn time_reorder<R: Rng + ?Sized>(
    x: &MelSpectrogram,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor, AugmentParams)> {
    let t = x.num_frames();
    require_axis(t, "time")?;
    let segments = cfg.tr_segments.sample(rng).clamp(1, t);
    let mut interior: Vec<usize> = (1..t).collect();
    let (chosen, _) = interior.partial_shuffle(rng, segments - 1);
    let mut cuts = chosen.to_vec();
    cuts.sort_unstable();

    let mut bounds = Vec::with_capacity(segments + 1);
    bounds.push(0);
    bounds.extend(cuts);
    bounds.push(t);

    let mut permutation: Vec<usize> = (0..segments).collect();
    permutation.shuffle(rng);
    let view = apply_reorder(x.frames(), &bounds, &permutation);
    Ok((view, AugmentParams::TimeReorder { bounds, permutation }))
}

fn generate_view(
    x: &MelSpectrogram,
    cfg: &AugmentConfig,
    seed: u64,
    index: usize,
) -> Result<(Tensor, ViewProvenance)> {
    let stream = index as u64;
    let mut r = rng::substream(seed, stream);
    let strategy = Strategy::for_view(index);
    let (view, params) = match strategy {
        Strategy::TimeMask => time_mask(x, cfg, &mut r)?,
        Strategy::FreqMask => freq_mask(x, cfg, &mut r)?,
        Strategy::TimeFreqMask => time_freq_mask(x, cfg, &mut r)?,
        Strategy::TimeReorder => time_reorder(x, cfg, &mut r)?,
        Strategy::Original => unreachable!("round-robin never schedules the original"),
    };
    Ok((
        view,
        ViewProvenance {
            index,
            strategy,
            params,
            substream: Some(stream),
        },
    ))
}

/// `num_aug_views` augmented views followed by the original, `M = num_aug_views + 1`.
pub fn build_augmented_batch(x: &MelSpectrogram, cfg: &AugmentConfig, seed: u64) -> Result<AugmentedBatch> {
    cfg.validate()?;
    let generated: Vec<(Tensor, ViewProvenance)> = (0..cfg.num_aug_views)
        .into_par_iter()
        .map(|i| generate_view(x, cfg, seed, i))
        .collect::<Result<_>>()?;

    let (t, f) = (x.num_frames(), x.mel_bins());
    let m = cfg.num_aug_views + 1;
    let mut data = Vec::with_capacity(m * t * f);
    let mut provenance = Vec::with_capacity(m);
    for (view, prov) in generated {
        data.extend_from_slice(view.data());
        provenance.push(prov);
    }
    data.extend_from_slice(x.frames().data());
    provenance.push(ViewProvenance {
        index: cfg.num_aug_views,
        strategy: Strategy::Original,
        params: AugmentParams::Original,
        substream: None,
    });

    Ok(AugmentedBatch {
        views: Tensor::new(vec![m, t, f], data)?,
        provenance,
        original_index: cfg.num_aug_views,
        seed,
        mask_fill: cfg.mask_fill,
    })
}
