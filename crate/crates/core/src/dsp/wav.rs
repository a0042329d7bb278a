//! Mono 16-bit PCM WAV files.
//!
//! Samples map to integers by a power-of-two scale (`x * 32768`), so decoding
//! is exact in `f64` and sums of decoded integers stay exact.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

pub fn quantize(x: f64) -> i16 {
    (x * SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn dequantize(q: i16) -> f64 {
    q as f64 / SCALE
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| match source {
        hound::Error::IoError(e) => Error::io(path, e),
        source => Error::Wav {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Reads raw 16-bit samples, rejecting anything that is not mono 16-bit PCM.
pub fn read_wav_i16(path: &Path, expected_rate: Option<u32>) -> Result<(Vec<i16>, u32)> {
    let reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            source: hound::Error::Unsupported,
        });
    }
    if let Some(expected) = expected_rate {
        if spec.sample_rate != expected {
            return Err(Error::SampleRate {
                path: path.to_path_buf(),
                expected,
                found: spec.sample_rate,
            });
        }
    }
    let samples = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err(path))?;
    Ok((samples, spec.sample_rate))
}

pub fn read_wav(path: &Path, expected_rate: Option<u32>) -> Result<Waveform> {
    let (samples, rate) = read_wav_i16(path, expected_rate)?;
    Ok(Waveform {
        samples: samples.into_iter().map(dequantize).collect(),
        sample_rate: rate,
    })
}

pub fn write_wav_i16(path: &Path, samples: &[i16], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in samples {
        writer.write_sample(s).map_err(wav_err(path))?;
    }
    writer.finalize().map_err(wav_err(path))
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let q: Vec<i16> = w.samples.iter().map(|&x| quantize(x)).collect();
    write_wav_i16(path, &q, w.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.25, 0.999, -1.0], 8000).unwrap();
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path, Some(8000)).unwrap();
        assert_eq!(back.samples, vec![0.0, 0.5, -0.25, 32735.0 / 32768.0, -1.0]);
    }

    #[test]
    fn sample_rate_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_wav(&path, &Waveform::zeros(10, 16000)).unwrap();
        assert!(matches!(
            read_wav(&path, Some(8000)),
            Err(Error::SampleRate { found: 16000, .. })
        ));
    }

    #[test]
    fn clamps_out_of_range() {
        assert_eq!(quantize(2.0), i16::MAX);
        assert_eq!(quantize(-2.0), i16::MIN);
    }
}
