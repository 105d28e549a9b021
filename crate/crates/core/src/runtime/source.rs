//! What the sensors see: electrode potentials, PPG and acceleration as a
//! function of the shared tick clock.

use std::collections::BTreeSet;

use crate::afe::NUM_CHANNELS;
use crate::power::Preset;
use crate::synth::{
    synthesize, Background, CardiacSpec, EmgBurst, EmgSpec, Modality, SsvepSpec, StimulusProtocol, SynthError, SynthSpec,
};

use super::{IMU_RATE, PPG_RATE, TICK_RATE};

pub trait SignalSource: Send {
    /// Potential at each AFE input, µV, for the sample at `tick` when the
    /// converter runs at `rate`.
    fn exg(&mut self, tick: u64, rate: u32) -> [f64; NUM_CHANNELS];
    /// PPG reading, arbitrary units.
    fn ppg(&mut self, tick: u64) -> f64;
    /// Acceleration on x, y, z, g.
    fn imu(&mut self, tick: u64) -> [f64; 3];
    /// Electrode coupling per input, 1 for good contact and 0 for an open lead.
    fn coupling(&self) -> [f64; NUM_CHANNELS] {
        [1.0; NUM_CHANNELS]
    }
}

/// Silent inputs, gravity on z.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatSource;

impl SignalSource for FlatSource {
    fn exg(&mut self, _tick: u64, _rate: u32) -> [f64; NUM_CHANNELS] {
        [0.0; NUM_CHANNELS]
    }

    fn ppg(&mut self, _tick: u64) -> f64 {
        0.0
    }

    fn imu(&mut self, _tick: u64) -> [f64; 3] {
        [0.0, 0.0, 1.0]
    }
}

/// Which synthesized modality feeds the AFE inputs.
fn exg_modality(spec: &SynthSpec) -> Option<Modality> {
    [Modality::Eeg, Modality::Emg, Modality::Ecg].into_iter().find(|m| spec.modalities.contains(m))
}

/// Synthesized signals, generated per sample rate on first use and looped
/// when the clock runs past the template duration.
pub struct SynthSource {
    template: SynthSpec,
    exg: Option<(u32, Vec<Vec<f64>>)>,
    ppg: Vec<f64>,
    imu: Vec<Vec<f64>>,
    coupling: [f64; NUM_CHANNELS],
}

impl SynthSource {
    /// `template.sample_rate` is ignored; each stream is generated at its
    /// own rate.
    pub fn new(template: SynthSpec) -> Result<Self, SynthError> {
        let with = |m: Modality, rate: u32| {
            let mut s = template.clone();
            s.modalities = BTreeSet::from([m]);
            s.sample_rate = rate as f64;
            s
        };
        let ppg = if template.modalities.contains(&Modality::Ppg) {
            synthesize(&with(Modality::Ppg, PPG_RATE))?.channels.remove(0)
        } else {
            Vec::new()
        };
        let imu = if template.modalities.contains(&Modality::Acc) {
            synthesize(&with(Modality::Acc, IMU_RATE))?.channels
        } else {
            Vec::new()
        };
        Ok(Self { template, exg: None, ppg, imu, coupling: [1.0; NUM_CHANNELS] })
    }

    /// Default signal mix for a form factor over `duration` seconds.
    pub fn for_preset(preset: Preset, seed: u64, duration: f64) -> Result<Self, SynthError> {
        Self::new(preset_spec(preset, seed, duration))
    }

    pub fn with_coupling(mut self, coupling: [f64; NUM_CHANNELS]) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn template(&self) -> &SynthSpec {
        &self.template
    }

    fn exg_record(&mut self, rate: u32) -> &[Vec<f64>] {
        if self.exg.as_ref().is_none_or(|(r, _)| *r != rate) {
            let inputs = match exg_modality(&self.template) {
                Some(m) => {
                    let mut s = self.template.clone();
                    s.modalities = BTreeSet::from([m]);
                    s.sample_rate = rate as f64;
                    // a template that fits its native rate may not fit this one
                    match synthesize(&s) {
                        Ok(rec) => rec.channels,
                        Err(_) => Vec::new(),
                    }
                }
                None => Vec::new(),
            };
            self.exg = Some((rate, inputs));
        }
        &self.exg.as_ref().expect("just filled").1
    }
}

fn looped(x: &[f64], index: u64) -> f64 {
    if x.is_empty() { 0.0 } else { x[(index % x.len() as u64) as usize] }
}

impl SignalSource for SynthSource {
    fn exg(&mut self, tick: u64, rate: u32) -> [f64; NUM_CHANNELS] {
        let index = tick * rate as u64 / TICK_RATE;
        let coupling = self.coupling;
        let rec = self.exg_record(rate);
        let mut out = [0.0; NUM_CHANNELS];
        for (c, ch) in rec.iter().take(NUM_CHANNELS).enumerate() {
            out[c] = coupling[c] * looped(ch, index);
        }
        out
    }

    fn ppg(&mut self, tick: u64) -> f64 {
        looped(&self.ppg, tick * PPG_RATE as u64 / TICK_RATE)
    }

    fn imu(&mut self, tick: u64) -> [f64; 3] {
        let index = tick * IMU_RATE as u64 / TICK_RATE;
        match self.imu.as_slice() {
            [x, y, z] => [looped(x, index), looped(y, index), looped(z, index)],
            _ => [0.0, 0.0, 1.0],
        }
    }

    fn coupling(&self) -> [f64; NUM_CHANNELS] {
        self.coupling
    }
}

/// Signal template for a form factor: headband EEG following the SSVEP
/// protocol plus earlobe PPG, sleeve EMG with periodic grasp bursts, and
/// chestband single-lead ECG with PPG. All carry the IMU.
pub fn preset_spec(preset: Preset, seed: u64, duration: f64) -> SynthSpec {
    let cardiac = CardiacSpec { heart_rate: 70.0, ptt: 0.22, rr_jitter: 0.05, ecg_noise_uv: 10.0 };
    let mut spec = SynthSpec {
        seed,
        duration,
        sample_rate: 500.0,
        modalities: BTreeSet::from([Modality::Acc]),
        eeg: None,
        ecg_ppg: None,
        emg: None,
        mains: None,
    };
    match preset {
        Preset::Headband => {
            let segments = StimulusProtocol::default()
                .schedule(seed)
                .into_iter()
                .filter(|s| s.start < duration)
                .collect();
            spec.modalities.extend([Modality::Eeg, Modality::Ppg]);
            spec.eeg = Some(SsvepSpec {
                target_freq: 0.0,
                snr_db: 0.0,
                n_channels: NUM_CHANNELS,
                background: Background::Pink,
                background_uv: 10.0,
                segments,
            });
            spec.ecg_ppg = Some(cardiac);
        }
        Preset::Sleeve => {
            spec.modalities.insert(Modality::Emg);
            // forearm and biceps groups alternate, 1.5 s bursts every 4 s
            let bursts = (0..)
                .map(|k| k as f64 * 4.0 + 1.0)
                .take_while(|t| t + 1.5 <= duration)
                .enumerate()
                .map(|(k, start)| EmgBurst {
                    start,
                    end: start + 1.5,
                    channels: if k % 2 == 0 { (0..12).collect() } else { (12..16).collect() },
                    amplitude_uv: 50.0,
                })
                .collect();
            spec.emg = Some(EmgSpec { n_channels: NUM_CHANNELS, bursts });
        }
        Preset::Chestband => {
            spec.modalities.extend([Modality::Ecg, Modality::Ppg]);
            spec.ecg_ppg = Some(cardiac);
        }
    }
    spec
}
