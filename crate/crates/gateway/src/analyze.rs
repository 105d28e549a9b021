//! Offline feature extraction from a recording: filtered traces, R-peaks,
//! pulse transit time and EMG RMS bins.

use biogap_core::dsp::{design_butterworth, detect_r_peaks, ptt_multirate, rms_bins, DspError, FilterSpec, PttResult};
use biogap_core::power::Preset;
use biogap_core::runtime::{PPG_RATE, TICK_RATE};
use serde::{Deserialize, Serialize};

use crate::recording::Recording;
use crate::reassembly::Reassembler;

/// EMG feature bin width, ms.
pub const EMG_BIN_MS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// AFE input index, or `None` for the PPG.
    pub channel: Option<usize>,
    pub sample_rate: f64,
    /// Tick of the first sample.
    pub start_tick: u64,
    pub filter: FilterSpec,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsBins {
    pub channel: usize,
    pub bin_ms: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub session_id: String,
    pub preset: Preset,
    pub exg_rate: Option<u32>,
    pub channels: Vec<usize>,
    /// ExG samples lost in transit and held at the previous value.
    pub filled_samples: usize,
    pub corrupt_packets: usize,
    pub traces: Vec<Trace>,
    /// R-peak times, s from the first ExG sample.
    pub r_peaks_s: Vec<f64>,
    pub ptt: Option<PttResult>,
    pub emg_rms: Vec<RmsBins>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub include_traces: bool,
    /// ExG channel holding the ECG; defaults to input 0 on the chestband.
    pub ecg_channel: Option<usize>,
    /// Treat the ExG as EMG; defaults to on for the sleeve.
    pub emg: Option<bool>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { include_traces: true, ecg_channel: None, emg: None }
    }
}

/// Display band per signal type, following the in-vivo processing: 10th-order
/// Butterworth 0.5–30 Hz for ECG/EEG, 0.5–15 Hz for PPG.
fn exg_filter(preset: Preset, fs: f64) -> FilterSpec {
    match preset {
        Preset::Sleeve => FilterSpec::bandpass(4, 20.0, (fs * 0.4).min(450.0), fs),
        Preset::Headband | Preset::Chestband => FilterSpec::bandpass(10, 0.5, 30.0, fs),
    }
}

pub fn ppg_filter() -> FilterSpec {
    FilterSpec::bandpass(10, 0.5, 15.0, PPG_RATE as f64)
}

fn filtered(spec: &FilterSpec, x: &[f64]) -> Result<Vec<f64>, DspError> {
    design_butterworth(spec)?.filtfilt(x)
}

pub fn analyze(rec: &Recording, options: &AnalyzeOptions) -> Result<Analysis, DspError> {
    let mut r = Reassembler::new(rec.header.afe);
    for p in rec.packets() {
        r.push(p);
    }
    let streams = r.into_streams();
    let preset = rec.header.preset;
    let mut out = Analysis {
        session_id: rec.header.session_id.clone(),
        preset,
        exg_rate: None,
        channels: Vec::new(),
        filled_samples: 0,
        corrupt_packets: rec.corrupt_count(),
        traces: Vec::new(),
        r_peaks_s: Vec::new(),
        ptt: None,
        emg_rms: Vec::new(),
    };
    let ecg_channel = options.ecg_channel.or((preset == Preset::Chestband).then_some(0));
    let emg = options.emg.unwrap_or(preset == Preset::Sleeve);

    let mut ecg_peaks = None;
    if let Some((block, filled)) = streams.exg_dense() {
        let fs = block.sample_rate as f64;
        out.exg_rate = Some(block.sample_rate);
        out.channels = block.channels.clone();
        out.filled_samples = filled;
        let spec = exg_filter(preset, fs);
        for (&ch, x) in block.channels.iter().zip(&block.data) {
            let y = filtered(&spec, x)?;
            if Some(ch) == ecg_channel {
                let peaks = detect_r_peaks(&y, fs);
                out.r_peaks_s = peaks.iter().map(|&p| p as f64 / fs).collect();
                ecg_peaks = Some((peaks, block.ticks[0], fs));
            }
            if emg {
                out.emg_rms.push(RmsBins { channel: ch, bin_ms: EMG_BIN_MS, values: rms_bins(&y, EMG_BIN_MS, fs)? });
            }
            if options.include_traces {
                out.traces.push(Trace { channel: Some(ch), sample_rate: fs, start_tick: block.ticks[0], filter: spec, samples: y });
            }
        }
    }

    if let Some(&(t0, _)) = streams.ppg.first() {
        let ppg = filtered(&ppg_filter(), &streams.ppg_values())?;
        if let Some((peaks, exg_t0, fs)) = &ecg_peaks {
            // express the peaks on the PPG's time origin
            let offset = (*exg_t0 as f64 - t0 as f64) / TICK_RATE as f64;
            let shifted: Vec<usize> =
                peaks.iter().filter_map(|&p| { let t = p as f64 / fs + offset; (t >= 0.0).then(|| (t * fs).round() as usize) }).collect();
            out.ptt = Some(ptt_multirate(&shifted, *fs, &ppg, PPG_RATE as f64));
        }
        if options.include_traces {
            out.traces.push(Trace { channel: None, sample_rate: PPG_RATE as f64, start_tick: t0, filter: ppg_filter(), samples: ppg });
        }
    }
    Ok(out)
}
