//! Seedable ground-truth signal generator.
//!
//! Produces EEG (background noise plus optional SSVEP tones), EMG bursts,
//! ECG, PPG and accelerometer channels at a common sample rate. Every random
//! draw comes from a ChaCha stream derived from the record seed, one stream
//! per purpose, so enabling a modality never perturbs another.

use std::collections::BTreeSet;
use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, FilterSpec};

/// Standard stimulus frequencies of the headband SSVEP protocol, Hz.
pub const SSVEP_FREQUENCIES: [f64; 4] = [7.5, 11.5, 13.5, 15.5];

/// Band used for SNR and noise definitions, Hz.
pub const REFERENCE_BAND: (f64, f64) = (0.5, 100.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eeg,
    Emg,
    Ecg,
    Ppg,
    Acc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    White,
    #[default]
    Pink,
}

/// A span of the SSVEP schedule; `freq == 0` marks rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusSegment {
    pub start: f64,
    pub end: f64,
    pub freq: f64,
}

impl StimulusSegment {
    pub fn is_rest(&self) -> bool {
        self.freq == 0.0
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Randomized-order stimulus protocol: each repetition presents every
/// frequency once, each stimulus followed by a rest period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusProtocol {
    pub frequencies: Vec<f64>,
    pub stimulus_s: f64,
    pub rest_s: f64,
    pub repetitions: usize,
}

impl Default for StimulusProtocol {
    fn default() -> Self {
        Self {
            frequencies: SSVEP_FREQUENCIES.to_vec(),
            stimulus_s: 25.0,
            rest_s: 10.0,
            repetitions: 3,
        }
    }
}

impl StimulusProtocol {
    pub fn duration(&self) -> f64 {
        (self.stimulus_s + self.rest_s) * (self.frequencies.len() * self.repetitions) as f64
    }

    /// Stimulus and rest segments, shuffled per repetition with `seed`.
    pub fn schedule(&self, seed: u64) -> Vec<StimulusSegment> {
        let mut rng = stream(seed, Stream::Protocol);
        let mut out = Vec::new();
        let mut t = 0.0;
        for _ in 0..self.repetitions {
            let mut order = self.frequencies.clone();
            order.shuffle(&mut rng);
            for f in order {
                out.push(StimulusSegment { start: t, end: t + self.stimulus_s, freq: f });
                t += self.stimulus_s;
                out.push(StimulusSegment { start: t, end: t + self.rest_s, freq: 0.0 });
                t += self.rest_s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsvepSpec {
    /// Stimulus frequency for the whole record, 0 for rest. Ignored when
    /// `segments` is non-empty.
    pub target_freq: f64,
    /// Tone RMS over background RMS in the reference band, dB.
    pub snr_db: f64,
    pub n_channels: usize,
    #[serde(default)]
    pub background: Background,
    /// Background RMS in the reference band, µV.
    #[serde(default = "default_background_uv")]
    pub background_uv: f64,
    #[serde(default)]
    pub segments: Vec<StimulusSegment>,
}

fn default_background_uv() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardiacSpec {
    /// Beats per minute.
    pub heart_rate: f64,
    /// R-peak to PPG steepest-rise delay, seconds.
    pub ptt: f64,
    /// Uniform RR perturbation, fraction of the nominal interval.
    #[serde(default)]
    pub rr_jitter: f64,
    /// White noise added to the ECG, µV RMS.
    #[serde(default = "default_ecg_noise")]
    pub ecg_noise_uv: f64,
}

fn default_ecg_noise() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmgBurst {
    pub start: f64,
    pub end: f64,
    pub channels: Vec<usize>,
    /// µV RMS during the plateau.
    pub amplitude_uv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmgSpec {
    pub n_channels: usize,
    #[serde(default)]
    pub bursts: Vec<EmgBurst>,
}

/// Powerline pickup added to every biopotential channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MainsSpec {
    pub freq: f64,
    pub amplitude_uv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub sample_rate: f64,
    pub modalities: BTreeSet<Modality>,
    #[serde(default)]
    pub eeg: Option<SsvepSpec>,
    #[serde(default)]
    pub ecg_ppg: Option<CardiacSpec>,
    #[serde(default)]
    pub emg: Option<EmgSpec>,
    #[serde(default)]
    pub mains: Option<MainsSpec>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid synth spec: {field}: {reason}")]
pub struct SynthError {
    pub field: &'static str,
    pub reason: String,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SynthError {
    SynthError { field, reason: reason.into() }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(invalid("duration", "must be > 0"));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(invalid("sample_rate", "must be > 0"));
        }
        if self.modalities.is_empty() {
            return Err(invalid("modalities", "at least one modality must be enabled"));
        }
        let nyq = self.sample_rate / 2.0;
        if self.modalities.contains(&Modality::Eeg) {
            let eeg = self.eeg_spec();
            if eeg.n_channels == 0 {
                return Err(invalid("eeg.n_channels", "must be >= 1"));
            }
            if !(eeg.target_freq >= 0.0 && eeg.target_freq < nyq) {
                return Err(invalid("eeg.target_freq", "must be >= 0 and below Nyquist"));
            }
            if !eeg.snr_db.is_finite() || !(eeg.background_uv >= 0.0) {
                return Err(invalid("eeg.snr_db", "SNR and background level must be finite"));
            }
            for s in &eeg.segments {
                if !(s.start >= 0.0 && s.end > s.start && s.freq >= 0.0 && s.freq < nyq) {
                    return Err(invalid("eeg.segments", format!("bad segment {s:?}")));
                }
            }
        }
        if self.modalities.contains(&Modality::Ecg) || self.modalities.contains(&Modality::Ppg) {
            let c = self.cardiac_spec();
            if !(30.0..=220.0).contains(&c.heart_rate) {
                return Err(invalid("ecg_ppg.heart_rate", "must lie in [30, 220] bpm"));
            }
            if !(c.ptt >= 0.0) {
                return Err(invalid("ecg_ppg.ptt", "must be >= 0"));
            }
            if !(0.0..=0.2).contains(&c.rr_jitter) {
                return Err(invalid("ecg_ppg.rr_jitter", "must lie in [0, 0.2]"));
            }
        }
        if self.modalities.contains(&Modality::Emg) {
            let e = self.emg_spec();
            if e.n_channels == 0 {
                return Err(invalid("emg.n_channels", "must be >= 1"));
            }
            if emg_band(self.sample_rate).is_none() {
                return Err(invalid("sample_rate", "too low to carry the 20 Hz+ EMG band"));
            }
            for b in &e.bursts {
                if !(b.start >= 0.0 && b.end <= self.duration && b.start < b.end) {
                    return Err(invalid("emg.bursts", "burst interval must lie within [0, duration]"));
                }
                if !(b.amplitude_uv > 0.0) {
                    return Err(invalid("emg.bursts", "amplitude must be > 0"));
                }
                if b.channels.iter().any(|c| *c >= e.n_channels) {
                    return Err(invalid("emg.bursts", "channel index out of range"));
                }
            }
        }
        let biopotential = self.modalities.iter().any(|m| matches!(m, Modality::Eeg | Modality::Emg | Modality::Ecg));
        if let (Some(m), true) = (&self.mains, biopotential) {
            if !(m.freq > 0.0 && m.freq < nyq) {
                return Err(invalid("mains.freq", "must lie below Nyquist"));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    fn eeg_spec(&self) -> SsvepSpec {
        self.eeg.clone().unwrap_or(SsvepSpec {
            target_freq: 0.0,
            snr_db: 0.0,
            n_channels: 1,
            background: Background::Pink,
            background_uv: default_background_uv(),
            segments: Vec::new(),
        })
    }

    fn cardiac_spec(&self) -> CardiacSpec {
        self.ecg_ppg.clone().unwrap_or(CardiacSpec {
            heart_rate: 60.0,
            ptt: 0.22,
            rr_jitter: 0.0,
            ecg_noise_uv: default_ecg_noise(),
        })
    }

    fn emg_spec(&self) -> EmgSpec {
        self.emg.clone().unwrap_or(EmgSpec { n_channels: 1, bursts: Vec::new() })
    }

    /// Channel order of the generated record.
    pub fn layout(&self) -> Vec<ChannelInfo> {
        let mut out = Vec::new();
        for m in &self.modalities {
            let n = match m {
                Modality::Eeg => self.eeg_spec().n_channels,
                Modality::Emg => self.emg_spec().n_channels,
                Modality::Ecg | Modality::Ppg => 1,
                Modality::Acc => 3,
            };
            out.extend((0..n).map(|index| ChannelInfo { modality: *m, index }));
        }
        out
    }

    /// The SSVEP schedule the EEG follows.
    pub fn ssvep_segments(&self) -> Vec<StimulusSegment> {
        let eeg = self.eeg_spec();
        if !eeg.segments.is_empty() {
            eeg.segments
        } else {
            vec![StimulusSegment { start: 0.0, end: self.duration, freq: eeg.target_freq }]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub modality: Modality,
    pub index: usize,
}

/// Units: µV for EEG/EMG/ECG, arbitrary units for PPG, g for ACC.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    pub tick: u64,
    pub values: Vec<f64>,
}

/// Output of [`synthesize`], stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub sample_rate: f64,
    pub layout: Vec<ChannelInfo>,
    pub channels: Vec<Vec<f64>>,
}

impl SynthRecord {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames(&self) -> impl Iterator<Item = SampleFrame> + '_ {
        (0..self.len()).map(move |n| SampleFrame {
            tick: n as u64,
            values: self.channels.iter().map(|c| c[n]).collect(),
        })
    }

    /// All channels of one modality, in index order.
    pub fn modality(&self, m: Modality) -> Vec<&[f64]> {
        self.layout
            .iter()
            .zip(&self.channels)
            .filter(|(info, _)| info.modality == m)
            .map(|(_, c)| c.as_slice())
            .collect()
    }

    pub fn channel(&self, m: Modality, index: usize) -> Option<&[f64]> {
        self.layout
            .iter()
            .position(|c| c.modality == m && c.index == index)
            .map(|i| self.channels[i].as_slice())
    }
}

/// Ground-truth annotations matching [`synthesize`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Annotations {
    /// R-peak times, seconds; every one lies on the sample grid.
    pub r_peaks: Vec<f64>,
    pub r_peak_samples: Vec<usize>,
    /// PPG steepest-rise times, seconds.
    pub ppg_rises: Vec<f64>,
    pub emg_bursts: Vec<EmgBurst>,
    pub ssvep_segments: Vec<StimulusSegment>,
}

impl Annotations {
    pub fn stimulus_segments(&self) -> impl Iterator<Item = &StimulusSegment> {
        self.ssvep_segments.iter().filter(|s| !s.is_rest())
    }
}

#[derive(Clone, Copy)]
enum Stream {
    EegBackground = 1,
    EegPhase,
    Rhythm,
    EcgNoise,
    PpgNoise,
    Emg,
    Acc,
    Protocol,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

pub fn synthesize(spec: &SynthSpec) -> Result<SynthRecord, SynthError> {
    spec.validate()?;
    let n = spec.n_samples();
    let fs = spec.sample_rate;
    let mut channels = Vec::new();
    let beats = spec
        .modalities
        .iter()
        .any(|m| matches!(m, Modality::Ecg | Modality::Ppg))
        .then(|| beat_train(spec));

    for m in &spec.modalities {
        match m {
            Modality::Eeg => channels.extend(eeg_channels(spec, n)),
            Modality::Emg => channels.extend(emg_channels(spec, n)),
            Modality::Ecg => channels.push(ecg_channel(spec, beats.as_ref().unwrap(), n)),
            Modality::Ppg => channels.push(ppg_channel(spec, beats.as_ref().unwrap(), n)),
            Modality::Acc => {
                let mut rng = stream(spec.seed, Stream::Acc);
                for axis in 0..3 {
                    let g = if axis == 2 { 1.0 } else { 0.0 };
                    channels.push(
                        (0..n).map(|_| g + 0.005 * rng.sample::<f64, _>(StandardNormal)).collect(),
                    );
                }
            }
        }
    }

    if let Some(mains) = &spec.mains {
        let layout = spec.layout();
        for (info, ch) in layout.iter().zip(&mut channels) {
            if matches!(info.modality, Modality::Eeg | Modality::Emg | Modality::Ecg) {
                for (i, v) in ch.iter_mut().enumerate() {
                    *v += mains.amplitude_uv * (2.0 * PI * mains.freq * i as f64 / fs).sin();
                }
            }
        }
    }

    Ok(SynthRecord { sample_rate: fs, layout: spec.layout(), channels })
}

pub fn ground_truth(spec: &SynthSpec) -> Result<Annotations, SynthError> {
    spec.validate()?;
    let mut ann = Annotations::default();
    if spec.modalities.contains(&Modality::Ecg) || spec.modalities.contains(&Modality::Ppg) {
        let beats = beat_train(spec);
        let n = spec.n_samples();
        for b in &beats {
            if b.r_sample < n {
                ann.r_peaks.push(b.r_time);
                ann.r_peak_samples.push(b.r_sample);
            }
            let rise = b.r_time + b.ptt;
            if rise < spec.duration {
                ann.ppg_rises.push(rise);
            }
        }
    }
    if spec.modalities.contains(&Modality::Emg) {
        ann.emg_bursts = spec.emg_spec().bursts;
    }
    if spec.modalities.contains(&Modality::Eeg) {
        ann.ssvep_segments = spec.ssvep_segments();
    }
    Ok(ann)
}

/// Noise with a `1/f^exponent` power spectrum, scaled to `band_rms` in the
/// reference band.
fn colored_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, exponent: f64, band_rms: f64) -> Vec<f64> {
    let size = n.next_power_of_two().max(2);
    let df = fs / size as f64;
    let (lo, hi) = (REFERENCE_BAND.0, REFERENCE_BAND.1.min(fs / 2.0));
    let mut spec = vec![Complex64::new(0.0, 0.0); size];
    let mut band_power = 0.0;
    for k in 1..=size / 2 {
        let f = k as f64 * df;
        let mag = f.powf(-exponent / 2.0);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = if k == size / 2 { 0.0 } else { rng.sample(StandardNormal) };
        let v = Complex64::new(re, im) * mag;
        spec[k] = v;
        if k != size / 2 {
            spec[size - k] = v.conj();
        }
        if f >= lo && f <= hi {
            let weight = if k == size / 2 { 1.0 } else { 2.0 };
            band_power += weight * v.norm_sqr();
        }
    }
    band_power /= (size * size) as f64;
    let time = dsp::ifft(&spec).expect("power-of-two size");
    let scale = if band_power > 0.0 { band_rms / band_power.sqrt() } else { 0.0 };
    time.iter().take(n).map(|c| c.re * scale).collect()
}

fn eeg_channels(spec: &SynthSpec, n: usize) -> Vec<Vec<f64>> {
    let eeg = spec.eeg_spec();
    let fs = spec.sample_rate;
    let mut bg_rng = stream(spec.seed, Stream::EegBackground);
    let mut phase_rng = stream(spec.seed, Stream::EegPhase);
    let exponent = match eeg.background {
        Background::White => 0.0,
        Background::Pink => 1.0,
    };
    let amplitude = SQRT_2 * 10f64.powf(eeg.snr_db / 20.0) * eeg.background_uv;
    let segments = spec.ssvep_segments();
    let base_phase: f64 = phase_rng.random_range(0.0..2.0 * PI);

    (0..eeg.n_channels)
        .map(|_| {
            let mut x = colored_noise(&mut bg_rng, n, fs, exponent, eeg.background_uv);
            let phase = base_phase + phase_rng.random_range(-0.3..0.3);
            for seg in segments.iter().filter(|s| !s.is_rest()) {
                let a = (seg.start * fs).round() as usize;
                let b = ((seg.end * fs).round() as usize).min(n);
                for (i, v) in x.iter_mut().enumerate().take(b).skip(a) {
                    let t = i as f64 / fs;
                    *v += amplitude * (2.0 * PI * seg.freq * t + phase).sin();
                }
            }
            x
        })
        .collect()
}

fn emg_band(fs: f64) -> Option<(f64, f64)> {
    let hi = 250.0f64.min(0.45 * fs);
    (hi > 20.0 * 1.5).then_some((20.0, hi))
}

fn emg_channels(spec: &SynthSpec, n: usize) -> Vec<Vec<f64>> {
    let emg = spec.emg_spec();
    let fs = spec.sample_rate;
    let (lo, hi) = emg_band(fs).expect("validated");
    let sos = dsp::design_butterworth(&FilterSpec::bandpass(4, lo, hi, fs)).expect("valid band");
    let mut rng = stream(spec.seed, Stream::Emg);
    const RAMP_S: f64 = 0.010;
    const BASELINE_UV: f64 = 1.0;

    (0..emg.n_channels)
        .map(|ch| {
            let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut carrier = sos.filter(&white).expect("finite");
            let rms = (carrier.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
            if rms > 0.0 {
                carrier.iter_mut().for_each(|v| *v /= rms);
            }
            let baseline: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            carrier
                .iter()
                .zip(&baseline)
                .enumerate()
                .map(|(i, (c, b))| {
                    let t = i as f64 / fs;
                    let env: f64 = emg
                        .bursts
                        .iter()
                        .filter(|burst| burst.channels.contains(&ch))
                        .map(|burst| {
                            let up = ((t - burst.start) / RAMP_S).clamp(0.0, 1.0);
                            let down = ((burst.end - t) / RAMP_S).clamp(0.0, 1.0);
                            burst.amplitude_uv * up.min(down)
                        })
                        .sum();
                    env * c + BASELINE_UV * b
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Beat {
    r_time: f64,
    r_sample: usize,
    /// Interval to the next beat, seconds.
    rr: f64,
    ptt: f64,
}

fn beat_train(spec: &SynthSpec) -> Vec<Beat> {
    let c = spec.cardiac_spec();
    let fs = spec.sample_rate;
    let mut rng = stream(spec.seed, Stream::Rhythm);
    let nominal = 60.0 / c.heart_rate;
    let mut beats: Vec<Beat> = Vec::new();
    // first beat half a nominal interval in, so a full P wave fits
    let mut t = 0.5 * nominal;
    // one extra beat past the end so the last pulse is complete
    while t < spec.duration + nominal {
        let r_sample = (t * fs).round() as usize;
        let jitter = if c.rr_jitter > 0.0 { rng.random_range(-1.0..=1.0) * c.rr_jitter } else { 0.0 };
        let rr = nominal * (1.0 + jitter);
        beats.push(Beat { r_time: r_sample as f64 / fs, r_sample, rr, ptt: c.ptt });
        t += rr;
    }
    for i in 0..beats.len().saturating_sub(1) {
        beats[i].rr = beats[i + 1].r_time - beats[i].r_time;
    }
    beats.retain(|b| b.r_time < spec.duration);
    beats
}

/// (offset s at RR = 1 s, amplitude µV, width s) of P, Q, R, S, T.
const ECG_LOBES: [(f64, f64, f64); 5] = [
    (-0.20, 150.0, 0.025),
    (-0.03, -150.0, 0.010),
    (0.00, 1200.0, 0.010),
    (0.03, -300.0, 0.010),
    (0.25, 350.0, 0.040),
];

fn ecg_channel(spec: &SynthSpec, beats: &[Beat], n: usize) -> Vec<f64> {
    let c = spec.cardiac_spec();
    let fs = spec.sample_rate;
    let mut rng = stream(spec.seed, Stream::EcgNoise);
    let mut x: Vec<f64> =
        (0..n).map(|_| c.ecg_noise_uv * rng.sample::<f64, _>(StandardNormal)).collect();
    for b in beats {
        let stretch = b.rr.min(1.2).sqrt();
        for (offset, amp, width) in ECG_LOBES {
            // QRS timing does not stretch with rate
            let center = if offset.abs() > 0.1 { b.r_time + offset * stretch } else { b.r_time + offset };
            let lo = ((center - 5.0 * width) * fs).floor().max(0.0) as usize;
            let hi = (((center + 5.0 * width) * fs).ceil() as usize).min(n);
            for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                let d = i as f64 / fs - center;
                *v += amp * (-d * d / (2.0 * width * width)).exp();
            }
        }
    }
    x
}

/// PPG pulse amplitude, arbitrary units.
const PPG_AMPLITUDE: f64 = 1000.0;

fn ppg_channel(spec: &SynthSpec, beats: &[Beat], n: usize) -> Vec<f64> {
    let fs = spec.sample_rate;
    let mut rng = stream(spec.seed, Stream::PpgNoise);
    let mut x: Vec<f64> = (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    for b in beats {
        let rise = (0.25 * b.rr).min(0.15);
        let decay = (0.6 * b.rr).min(0.6);
        // steepest point of a raised-cosine rise is its midpoint
        let foot = b.r_time + b.ptt - rise / 2.0;
        let lo = (foot * fs).ceil().max(0.0) as usize;
        let hi = (((foot + rise + decay) * fs).floor() as usize + 1).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let tau = i as f64 / fs - foot;
            let shape = if tau < rise {
                0.5 * (1.0 - (PI * tau / rise).cos())
            } else {
                0.5 * (1.0 + (PI * (tau - rise) / decay).cos())
            };
            *v += PPG_AMPLITUDE * shape;
        }
    }
    x
}
