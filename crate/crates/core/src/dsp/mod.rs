//! Numerical core shared by the device emulation and the host tools.

pub mod features;
pub mod fft;
pub mod iir;
pub mod spectral;

pub use features::{
    detect_r_peaks, detect_r_peaks_with, median, ptt, ptt_multirate, rms_bins, PttResult,
    RPeakConfig,
};
pub use fft::{fft, fft_real, ifft};
pub use iir::{design_butterworth, Biquad, FilterKind, FilterSpec, SosCascade, SosFilter};
pub use spectral::{band_rms, goertzel_power, tone_estimate, welch_psd, Psd};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("transform size {0} is not a power of two")]
    SizeNotPowerOfTwo(usize),
    #[error("filter design: {0}")]
    Design(String),
    #[error("non-finite input sample at index {index}")]
    NonFinite { index: usize },
    #[error("input too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
}
