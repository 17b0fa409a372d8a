use super::DspConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `mel_bins + 2` edge frequencies evenly spaced on the mel axis over `[fmin, fmax]`.
fn mel_edges(config: &DspConfig) -> Vec<f64> {
    let lo = hz_to_mel(config.fmin_hz);
    let hi = hz_to_mel(config.fmax_hz);
    let n = config.mel_bins + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

pub fn mel_center_frequencies(config: &DspConfig) -> Vec<f64> {
    let edges = mel_edges(config);
    edges[1..edges.len() - 1].to_vec()
}

/// Triangular filters, `mel_bins × (window_size/2 + 1)`, unit peak height.
pub fn mel_filterbank(config: &DspConfig) -> Result<Tensor> {
    config.validate()?;
    let edges = mel_edges(config);
    let bins = config.fft_bins();
    let bin_hz = config.sample_rate_hz as f64 / config.window_size as f64;
    let mut data = vec![0.0; config.mel_bins * bins];

    for m in 0..config.mel_bins {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut data[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(format!(
                "mel filter {m} ({lo:.1}-{hi:.1} Hz) contains no FFT bin; \
                 too many mel bins for a {}-point FFT",
                config.window_size
            )));
        }
    }
    Tensor::matrix(config.mel_bins, bins, data)
}
