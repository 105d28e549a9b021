//! Behavioral model of the 16-channel biopotential front-end.
//!
//! Covers gain, sample-rate selection, 24-bit quantization, input-referred
//! noise and the AC contact-quality probe. Aliasing and decimation filters
//! are not modeled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp;

pub const NUM_CHANNELS: usize = 16;
pub const RESOLUTION_BITS: u32 = 24;
pub const CODE_MAX: i32 = (1 << 23) - 1;
pub const CODE_MIN: i32 = -(1 << 23);
/// Differential reference, µV. Full scale is `±VREF_UV / gain`.
pub const VREF_UV: f64 = 2_400_000.0;

pub const SAMPLE_RATES: [u32; 8] = [250, 500, 1000, 2000, 4000, 8000, 16000, 32000];
pub const GAINS: [u8; 7] = [1, 2, 3, 4, 6, 8, 12];

/// Integrated input-referred noise over 0.5–100 Hz at gain 6, 1 kSPS, µV.
pub const NOISE_RMS_UV: f64 = 0.47;
const NOISE_CAL_RATE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supply {
    #[default]
    Unipolar,
    Bipolar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AfeConfig {
    pub sample_rate: u32,
    pub gain: u8,
    pub channels_enabled: u16,
    #[serde(default)]
    pub supply: Supply,
    #[serde(default = "yes")]
    pub noise_enabled: bool,
}

fn yes() -> bool {
    true
}

impl Default for AfeConfig {
    fn default() -> Self {
        Self {
            sample_rate: 500,
            gain: 12,
            channels_enabled: 0xFFFF,
            supply: Supply::Unipolar,
            noise_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AfeError {
    #[error("sample rate {0} SPS is not supported")]
    InvalidRate(u32),
    #[error("gain {0} is not supported")]
    InvalidGain(u8),
    #[error("no channel enabled")]
    NoChannels,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl AfeConfig {
    pub fn validate(&self) -> Result<(), AfeError> {
        if !SAMPLE_RATES.contains(&self.sample_rate) {
            return Err(AfeError::InvalidRate(self.sample_rate));
        }
        if !GAINS.contains(&self.gain) {
            return Err(AfeError::InvalidGain(self.gain));
        }
        Ok(())
    }

    pub fn validate_for_acquisition(&self) -> Result<(), AfeError> {
        self.validate()?;
        if self.channels_enabled == 0 {
            return Err(AfeError::NoChannels);
        }
        Ok(())
    }

    pub fn enabled_channels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_CHANNELS).filter(|c| self.channels_enabled & (1 << c) != 0)
    }

    pub fn n_enabled(&self) -> usize {
        self.channels_enabled.count_ones() as usize
    }

    pub fn full_scale_uv(&self) -> f64 {
        VREF_UV / self.gain as f64
    }

    /// One LSB referred to the input, µV.
    pub fn lsb_uv(&self) -> f64 {
        self.full_scale_uv() / (1u32 << 23) as f64
    }

    /// Standard deviation of the white input noise at this rate, µV.
    ///
    /// The noise density is held constant, so the per-sample deviation
    /// scales with the square root of the bandwidth.
    pub fn noise_sigma_uv(&self) -> f64 {
        let band = crate::synth::REFERENCE_BAND;
        let density = NOISE_RMS_UV / ((band.1 - band.0) / (NOISE_CAL_RATE / 2.0)).sqrt();
        density * (self.sample_rate as f64 / NOISE_CAL_RATE).sqrt()
    }

    /// Inverse of the quantizer.
    pub fn code_to_uv(&self, code: i32) -> f64 {
        code as f64 * self.lsb_uv()
    }
}

/// Quantized block: codes for enabled channels only, in mask order.
#[derive(Debug, Clone, PartialEq)]
pub struct Digitized {
    pub channels: Vec<usize>,
    pub codes: Vec<Vec<i32>>,
    /// Per frame: any enabled channel clipped.
    pub saturated: Vec<bool>,
}

impl Digitized {
    pub fn len(&self) -> usize {
        self.saturated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.saturated.is_empty()
    }

    /// Codes of frame `n` across enabled channels.
    pub fn frame(&self, n: usize) -> Vec<i32> {
        self.codes.iter().map(|c| c[n]).collect()
    }
}

/// Quantizes one value, reporting whether it clipped.
pub fn quantize(v_uv: f64, gain: u8) -> (i32, bool) {
    let raw = (v_uv * gain as f64 / VREF_UV * (1u32 << 23) as f64).round();
    if raw > CODE_MAX as f64 {
        (CODE_MAX, true)
    } else if raw < CODE_MIN as f64 {
        (CODE_MIN, true)
    } else {
        (raw as i32, false)
    }
}

/// One acquisition session: configuration plus the noise generator it owns.
#[derive(Debug, Clone)]
pub struct AfeSession {
    config: AfeConfig,
    rng: ChaCha8Rng,
}

impl AfeSession {
    pub fn new(config: AfeConfig, seed: u64) -> Result<Self, AfeError> {
        config.validate()?;
        Ok(Self { config, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn config(&self) -> &AfeConfig {
        &self.config
    }

    pub fn reconfigure(&mut self, config: AfeConfig) -> Result<(), AfeError> {
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Adds input noise (when enabled) to one µV sample and quantizes it.
    pub fn convert(&mut self, v_uv: f64) -> (i32, bool) {
        let noise = if self.config.noise_enabled {
            self.config.noise_sigma_uv() * self.rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        quantize(v_uv + noise, self.config.gain)
    }

    /// Digitizes `n_samples` of all [`NUM_CHANNELS`] inputs (µV, sampled at
    /// the configured rate). Disabled channels are dropped.
    pub fn digitize(&mut self, signal_uv: &[Vec<f64>], n_samples: usize) -> Result<Digitized, AfeError> {
        if signal_uv.len() != NUM_CHANNELS {
            return Err(AfeError::Shape(format!(
                "expected {NUM_CHANNELS} input channels, got {}",
                signal_uv.len()
            )));
        }
        if let Some((c, s)) = signal_uv.iter().enumerate().find(|(_, s)| s.len() != n_samples) {
            return Err(AfeError::Shape(format!(
                "channel {c} has {} samples, declared {n_samples}",
                s.len()
            )));
        }
        let channels: Vec<usize> = self.config.enabled_channels().collect();
        let mut codes = vec![Vec::with_capacity(n_samples); channels.len()];
        let mut saturated = vec![false; n_samples];
        // frame-major so the noise sequence does not depend on block size
        for (n, sat) in saturated.iter_mut().enumerate() {
            for (out, &c) in codes.iter_mut().zip(&channels) {
                let (code, clipped) = self.convert(signal_uv[c][n]);
                *sat |= clipped;
                out.push(code);
            }
        }
        Ok(Digitized { channels, codes, saturated })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactVerdict {
    Good,
    Marginal,
    Open,
}

/// Attenuation below this is good contact, dB.
pub const CONTACT_GOOD_DB: f64 = 6.0;
/// Attenuation above this is an open lead, dB.
pub const CONTACT_OPEN_DB: f64 = 20.0;

impl ContactVerdict {
    pub fn from_attenuation(db: f64) -> Self {
        if db < CONTACT_GOOD_DB {
            ContactVerdict::Good
        } else if db <= CONTACT_OPEN_DB {
            ContactVerdict::Marginal
        } else {
            ContactVerdict::Open
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactProbe {
    /// Square-wave frequency, Hz.
    pub freq: f64,
    /// Square-wave amplitude, µV.
    pub amplitude_uv: f64,
}

impl Default for ContactProbe {
    fn default() -> Self {
        Self { freq: 31.25, amplitude_uv: 10.0 }
    }
}

impl ContactProbe {
    /// Amplitude of the square wave's fundamental.
    pub fn fundamental_uv(&self) -> f64 {
        4.0 / std::f64::consts::PI * self.amplitude_uv
    }

    /// Record length used by the check: 32 probe periods.
    pub fn duration_s(&self) -> f64 {
        32.0 / self.freq
    }

    fn check(&self, sample_rate: f64) -> Result<(), AfeError> {
        if !(self.freq > 0.0 && self.freq < sample_rate / 2.0) {
            return Err(AfeError::Config(format!(
                "probe frequency {} Hz must lie below Nyquist ({} Hz)",
                self.freq,
                sample_rate / 2.0
            )));
        }
        Ok(())
    }

    /// Square wave value at time `t`.
    pub fn sample(&self, t: f64) -> f64 {
        let phase = (t * self.freq).fract();
        if phase < 0.5 {
            self.amplitude_uv
        } else {
            -self.amplitude_uv
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelContact {
    pub channel: usize,
    pub attenuation_db: f64,
    pub verdict: ContactVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub probe: ContactProbe,
    pub channels: Vec<ChannelContact>,
}

/// Cap on reported attenuation, dB; an open lead reads at the noise floor.
pub const MAX_ATTENUATION_DB: f64 = 120.0;

/// Estimates per-channel probe attenuation from recorded signals (µV, one
/// vector per entry of `channels`).
pub fn contact_check(
    channels: &[usize],
    signals_uv: &[Vec<f64>],
    sample_rate: f64,
    probe: ContactProbe,
) -> Result<ContactReport, AfeError> {
    probe.check(sample_rate)?;
    if channels.len() != signals_uv.len() {
        return Err(AfeError::Shape(format!(
            "{} channel ids for {} signals",
            channels.len(),
            signals_uv.len()
        )));
    }
    let reference = probe.fundamental_uv();
    let channels = channels
        .iter()
        .zip(signals_uv)
        .map(|(&channel, x)| {
            let (amp, _) = dsp::tone_estimate(x, probe.freq, sample_rate);
            let attenuation_db = if amp > 0.0 {
                (20.0 * (reference / amp).log10()).min(MAX_ATTENUATION_DB)
            } else {
                MAX_ATTENUATION_DB
            };
            ChannelContact { channel, attenuation_db, verdict: ContactVerdict::from_attenuation(attenuation_db) }
        })
        .collect();
    Ok(ContactReport { probe, channels })
}

/// Injects the probe on the bias path, couples it into every enabled
/// channel through `coupling[c]` (1 = perfect contact, 0 = open), digitizes
/// and analyzes the result.
pub fn run_contact_check(
    session: &mut AfeSession,
    coupling: &[f64; NUM_CHANNELS],
    probe: ContactProbe,
) -> Result<ContactReport, AfeError> {
    let cfg = *session.config();
    cfg.validate_for_acquisition()?;
    let fs = cfg.sample_rate as f64;
    probe.check(fs)?;
    let n = (probe.duration_s() * fs).round() as usize;
    let inputs: Vec<Vec<f64>> = (0..NUM_CHANNELS)
        .map(|c| (0..n).map(|i| coupling[c] * probe.sample(i as f64 / fs)).collect())
        .collect();
    let digitized = session.digitize(&inputs, n)?;
    let signals: Vec<Vec<f64>> = digitized
        .codes
        .iter()
        .map(|codes| codes.iter().map(|&c| cfg.code_to_uv(c)).collect())
        .collect();
    contact_check(&digitized.channels, &signals, fs, probe)
}
