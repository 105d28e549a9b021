//! Display-side transforms: causal filter chains, scaling and decimation of
//! the ExG stream for the console. Nothing here touches the recording.

use biogap_core::afe::AfeConfig;
use biogap_core::dsp::{design_butterworth, DspError, FilterSpec, SosFilter};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reassembly::ExgFrame;

/// Display points per second per channel when decimation is on.
pub const DISPLAY_POINTS_PER_S: f64 = 60.0;

/// One stage of a display filter chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FilterStage {
    Bandpass { order: usize, low_hz: f64, high_hz: f64 },
    Lowpass { order: usize, cutoff_hz: f64 },
    Highpass { order: usize, cutoff_hz: f64 },
    Notch { center_hz: f64, q: f64 },
}

impl FilterStage {
    pub fn spec(&self, sample_rate: f64) -> FilterSpec {
        match *self {
            FilterStage::Bandpass { order, low_hz, high_hz } => FilterSpec::bandpass(order, low_hz, high_hz, sample_rate),
            FilterStage::Lowpass { order, cutoff_hz } => FilterSpec::lowpass(order, cutoff_hz, sample_rate),
            FilterStage::Highpass { order, cutoff_hz } => FilterSpec::highpass(order, cutoff_hz, sample_rate),
            FilterStage::Notch { center_hz, q } => FilterSpec::notch(center_hz, q, sample_rate),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

fn default_points() -> Option<f64> {
    Some(DISPLAY_POINTS_PER_S)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    #[serde(default)]
    pub filters: Vec<FilterStage>,
    /// Display gain applied after filtering.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Channels to display; all enabled channels when absent.
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
    /// Upper bound on display points per second per channel; `None` shows
    /// every sample.
    #[serde(default = "default_points")]
    pub max_points_per_s: Option<f64>,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self { filters: Vec::new(), scale: 1.0, channels: None, max_points_per_s: default_points() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ViewError {
    #[error("filter stage {index}: {source}")]
    Filter { index: usize, source: DspError },
    #[error("scale {0} must be finite and nonzero")]
    Scale(f64),
    #[error("channel {0} does not exist")]
    Channel(usize),
    #[error("display rate {0} must be positive")]
    Points(f64),
}

impl ViewSpec {
    /// Checks the spec against a sample rate by designing every stage.
    pub fn build(&self, sample_rate: f64) -> Result<Vec<SosFilter>, ViewError> {
        if !(self.scale.is_finite() && self.scale != 0.0) {
            return Err(ViewError::Scale(self.scale));
        }
        if let Some(&c) = self.channels.iter().flatten().find(|&&c| c >= biogap_core::afe::NUM_CHANNELS) {
            return Err(ViewError::Channel(c));
        }
        if let Some(p) = self.max_points_per_s.filter(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(ViewError::Points(p));
        }
        self.filters
            .iter()
            .enumerate()
            .map(|(index, st)| {
                design_butterworth(&st.spec(sample_rate)).map(SosFilter::new).map_err(|source| ViewError::Filter { index, source })
            })
            .collect()
    }
}

/// Display samples for a run of frames sharing one layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayFrames {
    /// Tick of the first point.
    pub tick: u64,
    /// Points per second.
    pub rate_hz: f64,
    pub channels: Vec<usize>,
    /// One row per point, one value per channel, scaled µV.
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct Pipeline {
    rate: u32,
    mask: u16,
    /// Positions within the frame of the displayed channels.
    columns: Vec<usize>,
    channels: Vec<usize>,
    filters: Vec<Vec<SosFilter>>,
    primed: bool,
    decimation: usize,
    acc: Vec<f64>,
    acc_n: usize,
    acc_tick: u64,
}

/// Stateful display transform for one ExG stream.
#[derive(Debug, Clone)]
pub struct LiveView {
    spec: ViewSpec,
    pipeline: Option<Pipeline>,
}

impl LiveView {
    pub fn new(spec: ViewSpec) -> Result<Self, ViewError> {
        spec.build(500.0)?;
        Ok(Self { spec, pipeline: None })
    }

    pub fn spec(&self) -> &ViewSpec {
        &self.spec
    }

    /// Swaps the view. An invalid spec is rejected and the active one stays.
    pub fn set_spec(&mut self, spec: ViewSpec) -> Result<(), ViewError> {
        let rate = self.pipeline.as_ref().map_or(500, |p| p.rate);
        spec.build(rate as f64)?;
        self.spec = spec;
        self.pipeline = None;
        Ok(())
    }

    fn pipeline_for(&mut self, afe: &AfeConfig) -> &mut Pipeline {
        let stale = self.pipeline.as_ref().is_none_or(|p| p.rate != afe.sample_rate || p.mask != afe.channels_enabled);
        if stale {
            let enabled: Vec<usize> = afe.enabled_channels().collect();
            let (columns, channels): (Vec<usize>, Vec<usize>) = enabled
                .iter()
                .enumerate()
                .filter(|(_, c)| self.spec.channels.as_ref().is_none_or(|sel| sel.contains(c)))
                .map(|(i, &c)| (i, c))
                .unzip();
            // a chain valid at one rate may not be at another; show raw then
            let chain = self.spec.build(afe.sample_rate as f64).unwrap_or_default();
            let decimation = self
                .spec
                .max_points_per_s
                .map_or(1, |p| (afe.sample_rate as f64 / p).ceil().max(1.0) as usize);
            self.pipeline = Some(Pipeline {
                rate: afe.sample_rate,
                mask: afe.channels_enabled,
                filters: vec![chain; columns.len()],
                acc: vec![0.0; columns.len()],
                columns,
                channels,
                primed: false,
                decimation,
                acc_n: 0,
                acc_tick: 0,
            });
        }
        self.pipeline.as_mut().expect("just built")
    }

    /// Filters, scales and decimates a run of frames.
    pub fn push(&mut self, frames: &[ExgFrame]) -> Vec<DisplayFrames> {
        let mut out: Vec<DisplayFrames> = Vec::new();
        let scale = self.spec.scale;
        for f in frames {
            let p = self.pipeline_for(&f.afe);
            let uv: Vec<f64> = p.columns.iter().map(|&i| f.afe.code_to_uv(f.codes[i])).collect();
            if !p.primed {
                for (chain, &v) in p.filters.iter_mut().zip(&uv) {
                    chain.iter_mut().for_each(|s| s.prime(v));
                }
                p.primed = true;
            }
            if p.acc_n == 0 {
                p.acc_tick = f.tick;
            }
            for ((chain, acc), v) in p.filters.iter_mut().zip(&mut p.acc).zip(uv) {
                *acc += chain.iter_mut().fold(v, |x, s| s.process(x));
            }
            p.acc_n += 1;
            if p.acc_n == p.decimation {
                let point: Vec<f64> = p.acc.iter().map(|a| a / p.acc_n as f64 * scale).collect();
                p.acc.iter_mut().for_each(|a| *a = 0.0);
                p.acc_n = 0;
                let rate_hz = p.rate as f64 / p.decimation as f64;
                match out.last_mut() {
                    Some(last) if last.channels == p.channels && last.rate_hz == rate_hz => last.points.push(point),
                    _ => out.push(DisplayFrames { tick: p.acc_tick, rate_hz, channels: p.channels.clone(), points: vec![point] }),
                }
            }
        }
        out
    }
}
