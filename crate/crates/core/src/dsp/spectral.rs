//! Spectral measurements: Welch PSD, band-integrated RMS and single-bin
//! tone estimation.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{fft, DspError};

/// One-sided power spectral density estimate.
#[derive(Debug, Clone)]
pub struct Psd {
    /// Bin spacing in Hz.
    pub resolution: f64,
    /// Density per bin, units²/Hz.
    pub density: Vec<f64>,
}

impl Psd {
    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.resolution
    }

    /// Power integrated over bins whose center lies in `[lo, hi]`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.density
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = self.frequency(*k);
                f >= lo && f <= hi
            })
            .map(|(_, p)| p * self.resolution)
            .sum()
    }
}

/// Welch PSD with a Hann window, 50 % overlap and per-segment mean removal.
///
/// `segment` must be a power of two; records shorter than one segment use
/// the largest power of two that fits.
pub fn welch_psd(x: &[f64], sample_rate: f64, segment: usize) -> Result<Psd, DspError> {
    if segment == 0 || !segment.is_power_of_two() {
        return Err(DspError::SizeNotPowerOfTwo(segment));
    }
    if x.len() < 2 {
        return Err(DspError::TooShort { needed: 2, got: x.len() });
    }
    let seg = if x.len() >= segment {
        segment
    } else {
        1 << (usize::BITS - 1 - x.len().leading_zeros())
    };
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / seg as f64).cos())
        .collect();
    let win_energy: f64 = window.iter().map(|w| w * w).sum();
    let hop = seg / 2;
    let bins = seg / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut count = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); seg];
    let mut start = 0;
    while start + seg <= x.len() {
        let chunk = &x[start..start + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        for ((b, v), w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex64::new((v - mean) * w, 0.0);
        }
        fft::transform(&mut buf, false);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let scale = 1.0 / (sample_rate * win_energy * count as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || k == seg / 2 { 1.0 } else { 2.0 };
            p * scale * one_sided
        })
        .collect();
    Ok(Psd { resolution: sample_rate / seg as f64, density })
}

/// RMS of `x` integrated over `[lo, hi]` Hz.
pub fn band_rms(x: &[f64], sample_rate: f64, lo: f64, hi: f64) -> Result<f64, DspError> {
    let segment = (sample_rate * 4.0).round().max(2.0) as usize;
    let segment = segment.next_power_of_two();
    Ok(welch_psd(x, sample_rate, segment)?.band_power(lo, hi).sqrt())
}

/// Amplitude and phase of a sinusoid at `freq`, by correlating against a
/// complex exponential. Exact for tones with an integer number of cycles in
/// the record.
pub fn tone_estimate(x: &[f64], freq: f64, sample_rate: f64) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let w = -2.0 * PI * freq / sample_rate;
    let acc: Complex64 = x
        .iter()
        .enumerate()
        .map(|(n, v)| Complex64::from_polar(*v, w * n as f64))
        .sum();
    let amp = 2.0 * acc.norm() / x.len() as f64;
    (amp, acc.arg())
}

/// Goertzel power at `freq`: `|sum x[n] e^{-jwn}|^2`.
pub fn goertzel_power(x: &[f64], freq: f64, sample_rate: f64) -> f64 {
    let w = 2.0 * PI * freq / sample_rate;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in x {
        let s0 = v + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
    }
    s1 * s1 + s2 * s2 - coeff * s1 * s2
}
