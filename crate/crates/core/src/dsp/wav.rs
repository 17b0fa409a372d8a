use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

const PCM16_SCALE: f64 = 32768.0;

fn wav_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::format("header", msg),
        hound::Error::Unsupported => Error::format("encoding", "unsupported WAVE encoding"),
        other => Error::format("wav", other.to_string()),
    }
}

/// Reads a 16-bit PCM mono RIFF/WAVE file; samples scaled to `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            "channels",
            format!("expected mono, file has {} channels", spec.channels),
        ));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::format(
            "encoding",
            format!(
                "expected 16-bit PCM, file is {:?} with {} bits per sample",
                spec.sample_format, spec.bits_per_sample
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Ok((samples, spec.sample_rate))
}

/// Reads a WAV file and linearly resamples it to `target_rate`.
pub fn read_wav_resampled(path: impl AsRef<Path>, target_rate: u32) -> Result<Vec<f64>> {
    let (samples, rate) = read_wav(path)?;
    Ok(resample_linear(&samples, rate, target_rate))
}

/// Writes 16-bit PCM mono; values are clamped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &x in samples {
        let q = (x * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// Linear-interpolation resampling. Adequate for toy-scale inputs only.
pub fn resample_linear(samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if from_rate == to_rate || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = from_rate as f64 / to_rate as f64;
    let out_len = ((samples.len() as f64) / ratio).floor().max(1.0) as usize;
    let last = samples.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = (pos.floor() as usize).min(last);
            let frac = pos - j as f64;
            let next = samples[(j + 1).min(last)];
            samples[j] * (1.0 - frac) + next * frac
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_identity_and_halving() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(resample_linear(&x, 100, 100), x);
        let half = resample_linear(&x, 100, 50);
        assert_eq!(half, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        let double = resample_linear(&[0.0, 1.0], 50, 100);
        assert_eq!(double, vec![0.0, 0.5, 1.0, 1.0]);
    }
}
