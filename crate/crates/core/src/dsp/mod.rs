//! Short-time Fourier analysis and synthesis.
//!
//! Frames use a periodic Hann window at a 50% hop. The first frame starts a
//! quarter frame before sample zero so every sample of the signal lies under
//! a non-zero part of at least one window; with `T = ceil(len / hop)` frames
//! the tail is covered as well. Synthesis is the least-squares overlap-add,
//! which inverts analysis exactly for unmodified spectrograms.

mod wav;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use wav::{dequantize, quantize, read_wav, read_wav_i16, write_wav, write_wav_i16};

/// Default analysis sample rate; 32 ms frames at this rate give 129 bins.
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Mono time-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
}

/// Frame layout shared by a spectrogram and the signal it was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Length of the analysed signal; synthesis trims to it.
    pub signal_len: usize,
    pub window: WindowKind,
}

impl Geometry {
    pub fn new(frame_len: usize, sample_rate: u32, signal_len: usize) -> Result<Self> {
        if frame_len < 4 || !frame_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "frame length must be an even number of at least 4 samples, got {frame_len}"
            )));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(Self {
            frame_len,
            hop: frame_len / 2,
            sample_rate,
            signal_len,
            window: WindowKind::Hann,
        })
    }

    /// Nominal geometry for a bare `frames x bins` grid that never came from a
    /// signal (unit tests, synthetic loss problems).
    pub fn nominal(frames: usize, bins: usize) -> Self {
        let frame_len = 2 * bins.saturating_sub(1).max(2);
        Self {
            frame_len,
            hop: frame_len / 2,
            sample_rate: DEFAULT_SAMPLE_RATE,
            signal_len: frames * (frame_len / 2),
            window: WindowKind::Hann,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.signal_len.div_ceil(self.hop)
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Signed start of the first frame relative to sample zero is `-offset()`.
    pub fn offset(&self) -> usize {
        self.hop / 2
    }

    fn validate(&self) -> Result<()> {
        if self.frame_len < 4 || !self.frame_len.is_multiple_of(2) || self.hop != self.frame_len / 2 {
            return Err(Error::Structure(format!(
                "invalid geometry: frame_len {} hop {}",
                self.frame_len, self.hop
            )));
        }
        Ok(())
    }
}

/// Converts a frame duration to a sample count; the result must be an exact even integer.
pub fn frame_len_from_ms(frame_ms: f64, sample_rate: u32) -> Result<usize> {
    let exact = frame_ms * sample_rate as f64 / 1000.0;
    let rounded = exact.round();
    if !(exact.is_finite() && exact > 0.0) || (exact - rounded).abs() > 1e-9 * exact.max(1.0) {
        return Err(Error::Config(format!(
            "{frame_ms} ms at {sample_rate} Hz is not an integral number of samples"
        )));
    }
    let n = rounded as usize;
    if !n.is_multiple_of(2) || n < 4 {
        return Err(Error::Config(format!(
            "{frame_ms} ms at {sample_rate} Hz gives {n} samples; need an even count >= 4"
        )));
    }
    Ok(n)
}

/// Periodic Hann window, constant-overlap-add at a half-frame hop.
pub fn hann(frame_len: usize) -> Vec<f64> {
    (0..frame_len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / frame_len as f64).cos())
        .collect()
}

/// Complex STFT, `frames x bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub geometry: Geometry,
    pub frames: Array2<Complex64>,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }

    /// Time-domain energy implied by the one-sided spectrum through Parseval.
    pub fn parseval_energy(&self) -> f64 {
        let n = self.geometry.frame_len as f64;
        let last = self.num_bins() - 1;
        self.frames
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(k, c)| {
                        let w = if k == 0 || k == last { 1.0 } else { 2.0 };
                        w * c.norm_sqr()
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    fn check(&self) -> Result<()> {
        self.geometry.validate()?;
        let expected = (self.geometry.num_frames(), self.geometry.num_bins());
        if self.frames.dim() != expected {
            return Err(Error::Structure(format!(
                "spectrogram is {:?} but geometry implies {:?}",
                self.frames.dim(),
                expected
            )));
        }
        Ok(())
    }
}

/// Non-negative magnitude grid, `frames x bins`.
#[derive(Clone, Debug, PartialEq)]
pub struct MagSpectrogram {
    pub geometry: Geometry,
    pub values: Array2<f64>,
}

impl MagSpectrogram {
    /// Wraps a bare grid with a nominal geometry.
    pub fn from_values(values: Array2<f64>) -> Self {
        let (t, f) = values.dim();
        Self {
            geometry: Geometry::nominal(t, f),
            values,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Windows every frame of `w` and returns the raw frame buffers, `T x frame_len`.
fn frame_signal(samples: &[f64], geometry: &Geometry, window: &[f64]) -> Vec<Vec<f64>> {
    let offset = geometry.offset() as isize;
    (0..geometry.num_frames())
        .map(|t| {
            let start = (t * geometry.hop) as isize - offset;
            (0..geometry.frame_len)
                .map(|n| {
                    let idx = start + n as isize;
                    if idx >= 0 && (idx as usize) < samples.len() {
                        samples[idx as usize] * window[n]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// STFT with a frame duration in milliseconds. Only a 0.5 shift fraction is supported.
pub fn stft(w: &Waveform, frame_ms: f64, shift_fraction: f64) -> Result<Spectrogram> {
    if shift_fraction != 0.5 {
        return Err(Error::Config(format!(
            "only a 50% frame shift is supported, got {shift_fraction}"
        )));
    }
    let frame_len = frame_len_from_ms(frame_ms, w.sample_rate)?;
    stft_frames(w, frame_len)
}

/// STFT with an explicit frame length in samples (hop is half of it).
pub fn stft_frames(w: &Waveform, frame_len: usize) -> Result<Spectrogram> {
    let geometry = Geometry::new(frame_len, w.sample_rate, w.len())?;
    let bins = geometry.num_bins();
    let window = hann(frame_len);
    let frames = frame_signal(&w.samples, &geometry, &window);

    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let mut out = Array2::<Complex64>::zeros((frames.len(), bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    for (t, frame) in frames.iter().enumerate() {
        for (b, &x) in buf.iter_mut().zip(frame) {
            *b = Complex64::new(x, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            out[[t, k]] = buf[k];
        }
    }
    Ok(Spectrogram {
        geometry,
        frames: out,
    })
}

/// Least-squares overlap-add inverse of [`stft_frames`].
pub fn istft(s: &Spectrogram) -> Result<Waveform> {
    s.check()?;
    let g = &s.geometry;
    let n = g.frame_len;
    let bins = g.num_bins();
    let window = hann(n);
    let offset = g.offset() as isize;

    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut out = vec![0.0; g.signal_len];
    let mut norm = vec![0.0; g.signal_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (t, row) in s.frames.rows().into_iter().enumerate() {
        for k in 0..bins {
            buf[k] = row[k];
        }
        for k in bins..n {
            buf[k] = row[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = (t * g.hop) as isize - offset;
        for (i, c) in buf.iter().enumerate() {
            let idx = start + i as isize;
            if idx < 0 || idx as usize >= g.signal_len {
                continue;
            }
            let idx = idx as usize;
            out[idx] += window[i] * c.re / n as f64;
            norm[idx] += window[i] * window[i];
        }
    }
    for (y, w2) in out.iter_mut().zip(&norm) {
        if *w2 > 1e-12 {
            *y /= w2;
        } else {
            *y = 0.0;
        }
    }
    Ok(Waveform {
        samples: out,
        sample_rate: g.sample_rate,
    })
}

/// Element-wise modulus and argument; zero entries get phase 0.
pub fn magnitude_phase(s: &Spectrogram) -> (MagSpectrogram, Array2<f64>) {
    let mag = s.frames.mapv(|c| c.norm());
    let phase = s.frames.mapv(|c| {
        if c.re == 0.0 && c.im == 0.0 {
            0.0
        } else {
            c.im.atan2(c.re)
        }
    });
    (
        MagSpectrogram {
            geometry: s.geometry,
            values: mag,
        },
        phase,
    )
}

/// Rebuilds a complex spectrogram from magnitudes and phases.
pub fn combine(mag: &MagSpectrogram, phase: &Array2<f64>) -> Result<Spectrogram> {
    if mag.values.dim() != phase.dim() {
        return Err(Error::Structure(format!(
            "magnitude {:?} and phase {:?} grids differ",
            mag.values.dim(),
            phase.dim()
        )));
    }
    let mut frames = Array2::<Complex64>::zeros(mag.values.dim());
    ndarray::Zip::from(&mut frames)
        .and(&mag.values)
        .and(phase)
        .for_each(|c, &m, &p| *c = Complex64::from_polar(m, p));
    Ok(Spectrogram {
        geometry: mag.geometry,
        frames,
    })
}

/// Signal-to-noise ratio of `estimate` against `reference` in dB.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let signal: f64 = reference.iter().map(|x| x * x).sum();
    let noise: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}
