//! Link termination and recording: drives a simulated device over a link
//! model and appends every delivered packet to a recording.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use biogap_core::afe::{AfeConfig, NUM_CHANNELS};
use biogap_core::power::Preset;
use biogap_core::proto::{Delivery, DeviceBuffer, LinkError, LinkModel, LinkSim, LinkStats, DEFAULT_BUFFER_BITS};
use biogap_core::runtime::{
    preset_spec, Command, Device, DeviceConfig, DeviceEvent, Mode, Reply, SignalSource, StreamId, SynthSource, TICK_RATE,
};
use biogap_core::synth::SynthSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reassembly::{Reassembler, StreamStats};
use crate::recording::{RecordingError, RecordingHeader, RecordingWriter};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("device: {0}")]
    Device(String),
    #[error("link: {0}")]
    Link(#[from] LinkError),
    #[error("recording: {0}")]
    Recording(#[from] RecordingError),
    #[error("device refused to enter {mode}: {reply:?}")]
    Refused { mode: Mode, reply: Reply },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub id: String,
    pub preset: Preset,
    pub link: LinkModel,
    pub duration_s: f64,
    pub seed: u64,
    pub buffer_bits: u64,
    /// Acquisition mode entered at the start.
    pub mode: Mode,
    /// Device scheduling granularity, s.
    pub step_s: f64,
    /// Electrode coupling per input; `None` for good contact everywhere.
    pub coupling: Option<[f64; NUM_CHANNELS]>,
    /// Wall-clock start recorded in the header; 0 keeps recordings reproducible.
    pub start_wall_ms: u64,
}

impl SessionConfig {
    pub fn new(preset: Preset, link: LinkModel, duration_s: f64, seed: u64) -> Self {
        Self {
            id: format!("{}-{seed}", preset.name()),
            preset,
            link,
            duration_s,
            seed,
            buffer_bits: DEFAULT_BUFFER_BITS,
            mode: Mode::Streaming,
            step_s: 0.01,
            coupling: None,
            start_wall_ms: 0,
        }
    }

    /// Synthesized signal length: the session, bounded so long sessions loop
    /// a template instead of synthesizing hours of signal.
    pub fn signal_s(&self) -> f64 {
        self.duration_s.clamp(1.0, 600.0)
    }

    /// The signal template the simulated electrodes see.
    pub fn synth_spec(&self) -> SynthSpec {
        preset_spec(self.preset, self.seed, self.signal_s())
    }

    pub fn device(&self) -> Result<Device, SessionError> {
        let mut source = SynthSource::new(self.synth_spec()).map_err(|e| SessionError::Device(e.to_string()))?;
        if let Some(c) = self.coupling {
            source = source.with_coupling(c);
        }
        self.device_with(Box::new(source))
    }

    pub fn device_with(&self, source: Box<dyn SignalSource>) -> Result<Device, SessionError> {
        Device::new(DeviceConfig::for_preset(self.preset, self.seed), source).map_err(|e| SessionError::Device(e.to_string()))
    }
}

/// Finalized account of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub preset: Preset,
    pub start_tick: u64,
    pub end_tick: u64,
    pub recording_path: Option<PathBuf>,
    /// Keyed by stream name.
    pub streams: BTreeMap<String, StreamStats>,
    pub link: LinkStats,
    /// Packets the device buffer discarded.
    pub overflow_count: u64,
    pub afe: AfeConfig,
    pub mode: Mode,
    pub battery_level: f64,
    pub edge_energy_mj: f64,
    pub recording_bytes: u64,
    /// Set when storage failed and the session was cut short.
    pub partial: bool,
    pub error: Option<String>,
}

impl Session {
    pub fn total_gaps(&self) -> u64 {
        self.streams.values().map(|s| s.gaps).sum()
    }

    pub fn total_packets(&self) -> u64 {
        self.streams.values().map(|s| s.packets).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.streams.values().map(|s| s.bytes).sum()
    }

    pub fn stream(&self, id: StreamId) -> StreamStats {
        self.streams.get(id.name()).copied().unwrap_or_default()
    }
}

/// A device, its link and the recording, advanced together in simulated time.
pub struct SessionRunner<W: Write> {
    id: String,
    device: Device,
    link: LinkSim,
    writer: RecordingWriter<W>,
    rx: Reassembler,
    start_tick: u64,
    path: Option<PathBuf>,
    error: Option<io::Error>,
    events: Vec<DeviceEvent>,
}

impl<W: Write> SessionRunner<W> {
    pub fn new(
        id: impl Into<String>,
        device: Device,
        link: LinkModel,
        buffer_bits: u64,
        out: W,
        start_wall_ms: u64,
    ) -> Result<Self, SessionError> {
        let id = id.into();
        let header = RecordingHeader {
            preset: device.preset(),
            afe: device.afe_config(),
            tick_rate: TICK_RATE,
            start_wall_ms,
            start_tick: device.tick(),
            session_id: id.clone(),
        };
        Ok(Self {
            id,
            start_tick: device.tick(),
            rx: Reassembler::new(device.afe_config()).stats_only(),
            link: LinkSim::new(link, DeviceBuffer::new(buffer_bits))?,
            writer: RecordingWriter::new(out, &header)?,
            device,
            path: None,
            error: None,
            events: Vec::new(),
        })
    }

    fn with_path(mut self, path: &Path) -> Self {
        self.path = Some(path.to_path_buf());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn link(&self) -> &LinkSim {
        &self.link
    }

    pub fn receiver(&self) -> &Reassembler {
        &self.rx
    }

    pub fn time_s(&self) -> f64 {
        self.device.time_s()
    }

    pub fn is_aborted(&self) -> bool {
        self.error.is_some()
    }

    pub fn command(&mut self, cmd: Command) -> Reply {
        let reply = self.device.command(cmd);
        self.events.extend(self.device.take_events());
        reply
    }

    pub fn take_events(&mut self) -> Vec<DeviceEvent> {
        std::mem::take(&mut self.events)
    }

    /// Advances device and link by `dt` and returns what arrived at the
    /// gateway meanwhile, already recorded.
    pub fn step(&mut self, dt: f64) -> Vec<Delivery> {
        if self.is_aborted() {
            return Vec::new();
        }
        let out = self.device.step(dt);
        self.events.extend(self.device.take_events());
        for o in out {
            self.link.offer(o.time_s, o.packet).expect("device packets are well formed");
        }
        self.link.advance(self.device.time_s());
        self.receive()
    }

    fn receive(&mut self) -> Vec<Delivery> {
        let arrived = self.link.take_arrived();
        for d in &arrived {
            if self.error.is_some() {
                break;
            }
            match self.writer.append(&d.bytes) {
                Ok(()) => self.rx.push(&d.packet),
                Err(e) => self.error = Some(e),
            }
        }
        arrived
    }

    /// Sends partial packets, lets the link drain and finalizes the stats.
    pub fn finish(mut self) -> (Session, Option<W>) {
        if !self.is_aborted() {
            for o in self.device.flush_pending() {
                self.link.offer(o.time_s, o.packet).expect("device packets are well formed");
            }
            self.link.drain();
            self.receive();
        }
        let bytes = self.writer.bytes_written();
        let out = match self.writer.finish() {
            Ok(w) => Some(w),
            Err(e) => {
                self.error.get_or_insert(e);
                None
            }
        };
        let streams = self
            .rx
            .stats()
            .iter()
            .map(|(&id, s)| (StreamId::from_u8(id).map_or_else(|| format!("stream_{id}"), |s| s.name().to_string()), *s))
            .collect();
        let session = Session {
            id: self.id,
            preset: self.device.preset(),
            start_tick: self.start_tick,
            end_tick: self.device.tick(),
            recording_path: self.path,
            streams,
            link: self.link.stats(),
            overflow_count: self.link.buffer().overflow_count(),
            afe: self.rx.afe(),
            mode: self.device.mode(),
            battery_level: self.device.battery_level(),
            edge_energy_mj: self.device.edge_energy_mj(),
            recording_bytes: bytes,
            partial: self.error.is_some(),
            error: self.error.map(|e| e.to_string()),
        };
        (session, out)
    }
}

impl SessionRunner<io::BufWriter<std::fs::File>> {
    pub fn create(id: impl Into<String>, device: Device, link: LinkModel, buffer_bits: u64, path: &Path, start_wall_ms: u64) -> Result<Self, SessionError> {
        let file = std::fs::File::create(path).map_err(RecordingError::from)?;
        Ok(Self::new(id, device, link, buffer_bits, io::BufWriter::new(file), start_wall_ms)?.with_path(path))
    }
}

fn start(runner: &mut SessionRunner<impl Write>, mode: Mode) -> Result<(), SessionError> {
    if mode == Mode::Idle {
        return Ok(());
    }
    let reply = runner.command(Command::SetMode { mode });
    if !reply.is_ack() {
        return Err(SessionError::Refused { mode, reply });
    }
    Ok(())
}

/// Runs `device` for `cfg.duration_s` and writes the recording to `out`.
pub fn run_session_with<W: Write>(cfg: &SessionConfig, device: Device, out: W) -> Result<(Session, Option<W>), SessionError> {
    let mut runner = SessionRunner::new(&cfg.id, device, cfg.link.clone(), cfg.buffer_bits, out, cfg.start_wall_ms)?;
    drive(&mut runner, cfg)?;
    Ok(runner.finish())
}

fn drive(runner: &mut SessionRunner<impl Write>, cfg: &SessionConfig) -> Result<(), SessionError> {
    start(runner, cfg.mode)?;
    let steps = (cfg.duration_s / cfg.step_s).round() as u64;
    for _ in 0..steps {
        runner.step(cfg.step_s);
        if runner.is_aborted() {
            break;
        }
    }
    Ok(())
}

/// Simulates the preset device and records to `path`. A storage failure
/// ends the session early with `partial` set.
pub fn run_session(cfg: &SessionConfig, path: &Path) -> Result<Session, SessionError> {
    let mut runner = SessionRunner::create(&cfg.id, cfg.device()?, cfg.link.clone(), cfg.buffer_bits, path, cfg.start_wall_ms)?;
    drive(&mut runner, cfg)?;
    Ok(runner.finish().0)
}

/// Same as [`run_session`], recording into memory.
pub fn run_session_in_memory(cfg: &SessionConfig) -> Result<(Session, Vec<u8>), SessionError> {
    let (s, out) = run_session_with(cfg, cfg.device()?, Vec::new())?;
    Ok((s, out.unwrap_or_default()))
}
