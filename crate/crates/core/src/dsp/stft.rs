use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::DspConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `1 + floor((len − window) / hop)`, or 0 when the wave is shorter than a window.
pub fn num_frames(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        1 + (len - window) / hop
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed power spectra, `T × (window/2 + 1)`. No padding.
pub fn stft_power(wave: &[f64], config: &DspConfig) -> Result<Tensor> {
    config.validate()?;
    let (win, hop) = (config.window_size, config.hop_size);
    if wave.len() < win {
        return Err(Error::Input(format!(
            "wave has {} samples, shorter than one {win}-sample window",
            wave.len()
        )));
    }
    let frames = num_frames(wave.len(), win, hop);
    let bins = config.fft_bins();
    let window = hann(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);

    let mut out = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    for t in 0..frames {
        let chunk = &wave[t * hop..t * hop + win];
        for ((b, &x), &w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        out.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Tensor::matrix(frames, bins, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_law() {
        assert_eq!(num_frames(44_100, 1024, 320), 135);
        assert_eq!(num_frames(1024, 1024, 320), 1);
        assert_eq!(num_frames(1023, 1024, 320), 0);
    }

    #[test]
    fn zeros_in_zeros_out() {
        let p = stft_power(&vec![0.0; 3000], &DspConfig::default()).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_short_wave() {
        assert!(matches!(
            stft_power(&[0.0; 10], &DspConfig::default()),
            Err(Error::Input(_))
        ));
    }
}
