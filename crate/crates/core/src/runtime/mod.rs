//! Emulated firmware: seven cooperative tasks, the ExG data-ready handler,
//! the operating modes and the power-domain state machine, all driven by a
//! simulated clock.
//!
//! Every modality is timestamped on one tick counter running at
//! [`TICK_RATE`]; all supported sample rates divide it, so equal ticks across
//! streams denote simultaneous samples.

mod payload;
mod source;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::afe::{run_contact_check, AfeConfig, AfeSession, ContactProbe, ContactReport, GAINS, SAMPLE_RATES};
use crate::power::{power_report, Battery, DomainKind, PowerReport, Preset, INFERENCE_ENERGY_MJ};
use crate::proto::{flags, Packet};
use crate::ssvep::{SlidingClassifier, SsvepConfig, ONLINE_HOP_S, ONLINE_WINDOW_S};

pub use payload::{
    contact_frames, contact_from_frames, DeviceStatus, EdgeDecision, PayloadError, StreamId, IMU_CODES_PER_G,
    PPG_CODES_PER_AU, SCORE_SCALE,
};
pub use source::{preset_spec, FlatSource, SignalSource, SynthSource};

/// Shared sample clock, ticks per second.
pub const TICK_RATE: u64 = 32_000;
pub const PPG_RATE: u32 = 100;
pub const IMU_RATE: u32 = 400;
/// Usable bytes per link packet payload.
pub const LINK_PAYLOAD_BYTES: usize = 244;
/// Housekeeping period of the power-management and advertising tasks.
pub const HOUSEKEEPING_PERIOD_S: f64 = 1.0;
/// Battery fraction below which a low-battery event is raised.
pub const BATTERY_LOW: f64 = 0.15;

/// Frames that fit one packet for a stream of `width` codes.
pub fn frames_per_packet(width: usize) -> usize {
    (LINK_PAYLOAD_BYTES / (3 * width.max(1))).max(1)
}

pub fn ticks_to_s(tick: u64) -> f64 {
    tick as f64 / TICK_RATE as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    Streaming,
    EdgeAi,
    ContactCheck,
    Charging,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::Idle => 0,
            Mode::Streaming => 1,
            Mode::EdgeAi => 2,
            Mode::ContactCheck => 3,
            Mode::Charging => 4,
        }
    }

    pub fn from_code(code: i32) -> Option<Self> {
        [Mode::Idle, Mode::Streaming, Mode::EdgeAi, Mode::ContactCheck, Mode::Charging].get(usize::try_from(code).ok()?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Idle => "idle",
            Mode::Streaming => "streaming",
            Mode::EdgeAi => "edge_ai",
            Mode::ContactCheck => "contact_check",
            Mode::Charging => "charging",
        }
    }

    /// Modes in which the converter runs and data leaves the device.
    pub fn acquiring(self) -> bool {
        matches!(self, Mode::Streaming | Mode::EdgeAi)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Mode::Idle, Mode::Streaming, Mode::EdgeAi, Mode::ContactCheck, Mode::Charging]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

/// Commands accepted over the command channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Start,
    Stop,
    SetGain { gain: u8 },
    SetRate { rate: u32 },
    SetMask { mask: u16 },
    SetMode { mode: Mode },
    ContactCheck,
    QueryPower,
    SetDomain { domain: DomainKind, on: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NackReason {
    InvalidArgument,
    Busy,
    RequiredDomain,
    InvalidState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "snake_case")]
pub enum Reply {
    Ack {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        power: Option<PowerReport>,
    },
    Nack { reason: NackReason, detail: String },
}

impl Reply {
    fn ack() -> Self {
        Reply::Ack { power: None }
    }

    fn nack(reason: NackReason, detail: impl Into<String>) -> Self {
        Reply::Nack { reason, detail: detail.into() }
    }

    pub fn is_ack(&self) -> bool {
        matches!(self, Reply::Ack { .. })
    }

    pub fn nack_reason(&self) -> Option<NackReason> {
        match self {
            Reply::Nack { reason, .. } => Some(*reason),
            Reply::Ack { .. } => None,
        }
    }
}

/// Notable state changes, for the host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DeviceEvent {
    ModeChanged { tick: u64, from: Mode, to: Mode },
    ConfigChanged { tick: u64, afe: AfeConfig },
    PowerChanged { tick: u64, total_mw: f64 },
    ContactReport { tick: u64, report: ContactReport },
    BatteryLow { tick: u64, level: f64 },
    BatteryDepleted { tick: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    StateMachine,
    PowerMgmt,
    BleAdvertise,
    BleSend,
    BleReceive,
    Imu,
    Ppg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Trigger {
    Periodic { hz: f64 },
    Event,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::StateMachine,
        TaskKind::PowerMgmt,
        TaskKind::BleAdvertise,
        TaskKind::BleSend,
        TaskKind::BleReceive,
        TaskKind::Imu,
        TaskKind::Ppg,
    ];

    pub fn trigger(self) -> Trigger {
        match self {
            TaskKind::StateMachine | TaskKind::BleSend | TaskKind::BleReceive => Trigger::Event,
            TaskKind::PowerMgmt | TaskKind::BleAdvertise => Trigger::Periodic { hz: 1.0 / HOUSEKEEPING_PERIOD_S },
            TaskKind::Imu => Trigger::Periodic { hz: IMU_RATE as f64 },
            TaskKind::Ppg => Trigger::Periodic { hz: PPG_RATE as f64 },
        }
    }
}

/// Activation counts per task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStats {
    activations: [u64; 7],
}

impl TaskStats {
    pub fn activations(&self, task: TaskKind) -> u64 {
        self.activations[task as usize]
    }

    fn bump(&mut self, task: TaskKind) {
        self.activations[task as usize] += 1;
    }
}

/// On-device classifier fed with every ExG frame in edge-AI mode.
pub trait EdgeClassifier: Send {
    /// Called whenever the input layout changes; drops buffered state.
    fn configure(&mut self, n_channels: usize, sample_rate: f64);
    /// Takes one frame in µV; returns a decision frame when one is due.
    fn push(&mut self, frame_uv: &[f64]) -> Option<Vec<i32>>;
    /// Energy charged to the battery per decision, mJ.
    fn energy_per_decision_mj(&self) -> f64;
}

/// SSVEP NCCA classifier over all enabled channels.
pub struct SsvepEdgeClassifier {
    config: SsvepConfig,
    window_s: f64,
    hop_s: f64,
    energy_mj: f64,
    inner: Option<SlidingClassifier>,
}

impl SsvepEdgeClassifier {
    pub fn new(config: SsvepConfig, window_s: f64, hop_s: f64) -> Self {
        Self { config, window_s, hop_s, energy_mj: INFERENCE_ENERGY_MJ, inner: None }
    }

    pub fn with_energy(mut self, mj: f64) -> Self {
        self.energy_mj = mj;
        self
    }
}

impl Default for SsvepEdgeClassifier {
    fn default() -> Self {
        Self::new(SsvepConfig::default(), ONLINE_WINDOW_S, ONLINE_HOP_S)
    }
}

impl EdgeClassifier for SsvepEdgeClassifier {
    fn configure(&mut self, n_channels: usize, sample_rate: f64) {
        self.inner = SlidingClassifier::new(n_channels, sample_rate, self.window_s, self.hop_s, self.config.clone()).ok();
    }

    fn push(&mut self, frame_uv: &[f64]) -> Option<Vec<i32>> {
        let d = self.inner.as_mut()?.push(frame_uv).ok().flatten()?;
        let decision = EdgeDecision { decision_hz: d.result.decision, scores: d.result.scores.iter().map(|s| s.ncca).collect() };
        Some(decision.to_frame())
    }

    fn energy_per_decision_mj(&self) -> f64 {
        self.energy_mj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub preset: Preset,
    pub afe: AfeConfig,
    pub battery: Battery,
    /// Seeds the converter noise.
    pub seed: u64,
}

impl DeviceConfig {
    pub fn for_preset(preset: Preset, seed: u64) -> Self {
        let channels_enabled = match preset {
            Preset::Chestband => 0x0001,
            Preset::Headband | Preset::Sleeve => 0xFFFF,
        };
        Self { preset, afe: AfeConfig { channels_enabled, ..AfeConfig::default() }, battery: Battery::default(), seed }
    }
}

/// Packet handed to the link, stamped with the simulated time it was ready.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub time_s: f64,
    pub packet: Packet,
}

#[derive(Debug, Default)]
struct Pending {
    first_tick: u64,
    flags: u8,
    frames: Vec<Vec<i32>>,
}

enum SmEvent {
    Command(Command),
    ContactDone,
}

struct ContactRun {
    end_tick: u64,
    resume: Mode,
    report: ContactReport,
}

#[derive(Debug, Clone, Copy, Default)]
struct NextTicks {
    exg: Option<u64>,
    ppg: Option<u64>,
    imu: Option<u64>,
}

pub struct Device {
    config: DeviceConfig,
    afe: AfeSession,
    source: Box<dyn SignalSource>,
    classifier: Box<dyn EdgeClassifier>,
    power: PowerReport,
    mode: Mode,
    tick: u64,
    battery_level: f64,
    battery_low_raised: bool,
    edge_energy_mj: f64,
    tasks: TaskStats,
    seq: [u32; 6],
    exg: Pending,
    ppg: Pending,
    imu: Pending,
    next: NextTicks,
    next_housekeeping: u64,
    contact: Option<ContactRun>,
    rx: VecDeque<Command>,
    sm: VecDeque<SmEvent>,
    outbox: VecDeque<Outgoing>,
    events: Vec<DeviceEvent>,
}

fn period(rate: u32) -> u64 {
    TICK_RATE / rate as u64
}

fn align_up(tick: u64, period: u64) -> u64 {
    tick.div_ceil(period) * period
}

impl Device {
    pub fn new(config: DeviceConfig, source: Box<dyn SignalSource>) -> Result<Self, crate::afe::AfeError> {
        let afe = AfeSession::new(config.afe, config.seed)?;
        let power = power_report(config.preset, config.battery).map_err(|e| crate::afe::AfeError::Config(e.to_string()))?;
        Ok(Self {
            config,
            afe,
            source,
            classifier: Box::new(SsvepEdgeClassifier::default()),
            power,
            mode: Mode::Idle,
            tick: 0,
            battery_level: 1.0,
            battery_low_raised: false,
            edge_energy_mj: 0.0,
            tasks: TaskStats::default(),
            seq: [0; 6],
            exg: Pending::default(),
            ppg: Pending::default(),
            imu: Pending::default(),
            next: NextTicks::default(),
            next_housekeeping: 0,
            contact: None,
            rx: VecDeque::new(),
            sm: VecDeque::new(),
            outbox: VecDeque::new(),
            events: Vec::new(),
        })
    }

    /// Preset device fed by the preset's synthesized signals.
    pub fn with_synth(preset: Preset, seed: u64, signal_s: f64) -> Result<Self, crate::afe::AfeError> {
        let source = SynthSource::for_preset(preset, seed, signal_s).map_err(|e| crate::afe::AfeError::Config(e.to_string()))?;
        Self::new(DeviceConfig::for_preset(preset, seed), Box::new(source))
    }

    pub fn set_classifier(&mut self, classifier: Box<dyn EdgeClassifier>) {
        self.classifier = classifier;
    }

    pub fn preset(&self) -> Preset {
        self.config.preset
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn afe_config(&self) -> AfeConfig {
        *self.afe.config()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time_s(&self) -> f64 {
        ticks_to_s(self.tick)
    }

    pub fn power(&self) -> &PowerReport {
        &self.power
    }

    pub fn battery(&self) -> Battery {
        self.config.battery
    }

    pub fn battery_level(&self) -> f64 {
        self.battery_level
    }

    pub fn edge_energy_mj(&self) -> f64 {
        self.edge_energy_mj
    }

    pub fn tasks(&self) -> TaskStats {
        self.tasks
    }

    pub fn status(&self) -> DeviceStatus {
        DeviceStatus { mode: self.mode, afe: self.afe_config(), battery_permille: (self.battery_level * 1000.0).round() as u16 }
    }

    pub fn take_events(&mut self) -> Vec<DeviceEvent> {
        std::mem::take(&mut self.events)
    }

    /// Hours until empty at the present draw and level.
    pub fn projected_life_h(&self) -> Option<f64> {
        let mw = self.power.total_mw;
        (mw > 0.0).then(|| self.battery_level * self.config.battery.energy_mwh() / mw)
    }

    fn domain_on(&self, kind: DomainKind) -> bool {
        self.power.domain(kind).is_some_and(|d| d.active)
    }

    fn exg_powered(&self) -> bool {
        self.domain_on(DomainKind::AdsAnalog) && self.domain_on(DomainKind::AdsDigital)
    }

    /// Queues a command for the receive task and runs the event-driven tasks
    /// until it has been handled. Changes apply from the next frame boundary.
    pub fn command(&mut self, cmd: Command) -> Reply {
        self.rx.push_back(cmd);
        let mut reply = Reply::ack();
        // ble_receive hands commands to the state machine
        while let Some(cmd) = self.rx.pop_front() {
            self.tasks.bump(TaskKind::BleReceive);
            self.sm.push_back(SmEvent::Command(cmd));
        }
        while let Some(ev) = self.sm.pop_front() {
            self.tasks.bump(TaskKind::StateMachine);
            match ev {
                SmEvent::Command(cmd) => reply = self.handle(cmd),
                SmEvent::ContactDone => self.finish_contact(),
            }
        }
        reply
    }

    /// Switches a power domain on or off.
    pub fn power_transition(&mut self, domain: DomainKind, on: bool) -> Reply {
        self.command(Command::SetDomain { domain, on })
    }

    fn handle(&mut self, cmd: Command) -> Reply {
        use NackReason::*;
        if self.mode == Mode::ContactCheck && cmd != Command::QueryPower {
            return Reply::nack(Busy, "contact check in progress");
        }
        match cmd {
            Command::Start => self.handle(Command::SetMode { mode: Mode::Streaming }),
            Command::Stop => self.handle(Command::SetMode { mode: Mode::Idle }),
            Command::SetMode { mode: Mode::ContactCheck } => Reply::nack(InvalidArgument, "use the contact_check command"),
            Command::SetMode { mode } => {
                if self.mode == Mode::Charging && mode.acquiring() {
                    return Reply::nack(InvalidState, "device is charging");
                }
                if mode.acquiring() {
                    if let Err(e) = self.afe.config().validate_for_acquisition() {
                        return Reply::nack(InvalidArgument, e.to_string());
                    }
                }
                self.enter_mode(mode);
                Reply::ack()
            }
            Command::SetGain { gain } => {
                if !GAINS.contains(&gain) {
                    return Reply::nack(InvalidArgument, format!("gain {gain} not in {GAINS:?}"));
                }
                self.apply_afe(AfeConfig { gain, ..self.afe_config() })
            }
            Command::SetRate { rate } => {
                if !SAMPLE_RATES.contains(&rate) {
                    return Reply::nack(InvalidArgument, format!("rate {rate} not in {SAMPLE_RATES:?}"));
                }
                self.apply_afe(AfeConfig { sample_rate: rate, ..self.afe_config() })
            }
            Command::SetMask { mask } => {
                if mask == 0 {
                    return Reply::nack(InvalidArgument, "at least one channel must stay enabled");
                }
                self.apply_afe(AfeConfig { channels_enabled: mask, ..self.afe_config() })
            }
            Command::ContactCheck => self.start_contact(),
            Command::QueryPower => Reply::Ack { power: Some(self.power.clone()) },
            Command::SetDomain { domain, on } => self.set_domain(domain, on),
        }
    }

    fn set_domain(&mut self, domain: DomainKind, on: bool) -> Reply {
        if self.power.domain(domain).is_none() {
            return Reply::nack(NackReason::InvalidArgument, format!("{} is not populated on the {}", domain.label(), self.config.preset));
        }
        if !on && domain == DomainKind::Nrf {
            return Reply::nack(NackReason::RequiredDomain, "the control domain cannot be switched off");
        }
        if !on && domain == DomainKind::Gap9 && self.mode == Mode::EdgeAi {
            return Reply::nack(NackReason::RequiredDomain, "edge AI runs on GAP9");
        }
        self.power.set_active(domain, on).expect("domain exists");
        match domain {
            DomainKind::AdsAnalog | DomainKind::AdsDigital => self.flush_exg(),
            DomainKind::Ppg => self.flush(StreamId::Ppg),
            DomainKind::Imu => self.flush(StreamId::Imu),
            _ => {}
        }
        self.schedule_sensors();
        self.events.push(DeviceEvent::PowerChanged { tick: self.tick, total_mw: self.power.total_mw });
        Reply::ack()
    }

    fn apply_afe(&mut self, cfg: AfeConfig) -> Reply {
        if cfg == self.afe_config() {
            return Reply::ack();
        }
        // frames already buffered belong to the old configuration
        self.flush_exg();
        let rate_changed = cfg.sample_rate != self.afe_config().sample_rate;
        let layout_changed = rate_changed || cfg.channels_enabled != self.afe_config().channels_enabled;
        self.afe.reconfigure(cfg).expect("validated by caller");
        if rate_changed {
            self.next.exg = None;
            self.schedule_sensors();
        }
        if layout_changed {
            self.classifier.configure(cfg.n_enabled(), cfg.sample_rate as f64);
        }
        if self.mode == Mode::Streaming {
            self.emit_status();
        }
        self.events.push(DeviceEvent::ConfigChanged { tick: self.tick, afe: cfg });
        Reply::ack()
    }

    fn enter_mode(&mut self, mode: Mode) {
        let from = self.mode;
        if from == mode {
            return;
        }
        self.flush_all();
        if from == Mode::EdgeAi {
            self.power.set_active(DomainKind::Gap9, false).ok();
        }
        self.mode = mode;
        match mode {
            Mode::EdgeAi => {
                self.power.set_active(DomainKind::Gap9, true).ok();
                let cfg = self.afe_config();
                self.classifier.configure(cfg.n_enabled(), cfg.sample_rate as f64);
            }
            Mode::Streaming => self.emit_status(),
            _ => {}
        }
        self.next = NextTicks::default();
        self.schedule_sensors();
        self.events.push(DeviceEvent::ModeChanged { tick: self.tick, from, to: mode });
    }

    /// Arms the next sample tick of every sensor that should be running.
    fn schedule_sensors(&mut self) {
        let t = self.tick;
        let streaming = self.mode == Mode::Streaming;
        let exg_on = self.mode.acquiring() && self.exg_powered();
        let ppg_on = streaming && self.domain_on(DomainKind::Ppg);
        let imu_on = streaming && self.domain_on(DomainKind::Imu);
        let rate = self.afe_config().sample_rate;
        let arm = |on: bool, cur: Option<u64>, p: u64| if on { Some(cur.unwrap_or_else(|| align_up(t, p))) } else { None };
        self.next.exg = arm(exg_on, self.next.exg, period(rate));
        self.next.ppg = arm(ppg_on, self.next.ppg, period(PPG_RATE));
        self.next.imu = arm(imu_on, self.next.imu, period(IMU_RATE));
    }

    fn start_contact(&mut self) -> Reply {
        if self.mode == Mode::Charging {
            return Reply::nack(NackReason::InvalidState, "device is charging");
        }
        if !self.exg_powered() {
            return Reply::nack(NackReason::RequiredDomain, "contact check needs the ADS domains");
        }
        let probe = ContactProbe::default();
        let coupling = self.source.coupling();
        let report = match run_contact_check(&mut self.afe, &coupling, probe) {
            Ok(r) => r,
            Err(e) => return Reply::nack(NackReason::InvalidArgument, e.to_string()),
        };
        let resume = self.mode;
        let duration = (probe.duration_s() * TICK_RATE as f64).round() as u64;
        self.enter_mode(Mode::ContactCheck);
        self.contact = Some(ContactRun { end_tick: self.tick + duration, resume, report });
        Reply::ack()
    }

    fn finish_contact(&mut self) {
        let Some(run) = self.contact.take() else { return };
        let packet = self.packet(StreamId::Contact, 0, self.tick, contact_frames(&run.report));
        self.enqueue(packet);
        self.events.push(DeviceEvent::ContactReport { tick: self.tick, report: run.report });
        self.enter_mode(run.resume);
    }

    fn packet(&mut self, stream: StreamId, flags: u8, first_tick: u64, frames: Vec<Vec<i32>>) -> Packet {
        let seq = &mut self.seq[stream as usize];
        let p = Packet { stream_id: stream as u8, flags, seq: *seq, timestamp_ticks: first_tick, frames };
        *seq = seq.wrapping_add(1);
        p
    }

    fn enqueue(&mut self, packet: Packet) {
        self.outbox.push_back(Outgoing { time_s: self.time_s(), packet });
    }

    fn emit_status(&mut self) {
        let frame = self.status().to_frame();
        let p = self.packet(StreamId::Status, 0, self.tick, vec![frame]);
        self.enqueue(p);
    }

    fn pending_mut(&mut self, stream: StreamId) -> &mut Pending {
        match stream {
            StreamId::Exg => &mut self.exg,
            StreamId::Ppg => &mut self.ppg,
            StreamId::Imu => &mut self.imu,
            _ => unreachable!("only sample streams are batched"),
        }
    }

    fn flush(&mut self, stream: StreamId) {
        let pending = std::mem::take(self.pending_mut(stream));
        if !pending.frames.is_empty() {
            let p = self.packet(stream, pending.flags, pending.first_tick, pending.frames);
            self.enqueue(p);
        }
    }

    fn flush_exg(&mut self) {
        self.flush(StreamId::Exg);
    }

    fn flush_all(&mut self) {
        for s in [StreamId::Exg, StreamId::Ppg, StreamId::Imu] {
            self.flush(s);
        }
    }

    /// Sends any partially filled sample packets.
    pub fn flush_pending(&mut self) -> Vec<Outgoing> {
        self.flush_all();
        self.ble_send()
    }

    fn push_frame(&mut self, stream: StreamId, tick: u64, frame: Vec<i32>, flags: u8) {
        let per_packet = frames_per_packet(frame.len());
        let pending = self.pending_mut(stream);
        if pending.frames.is_empty() {
            pending.first_tick = tick;
        }
        pending.flags |= flags;
        pending.frames.push(frame);
        if pending.frames.len() >= per_packet {
            self.flush(stream);
        }
    }

    fn on_exg(&mut self, tick: u64) {
        let cfg = self.afe_config();
        let inputs = self.source.exg(tick, cfg.sample_rate);
        let mut saturated = false;
        let codes: Vec<i32> = cfg
            .enabled_channels()
            .map(|c| {
                let (code, clipped) = self.afe.convert(inputs[c]);
                saturated |= clipped;
                code
            })
            .collect();
        match self.mode {
            Mode::Streaming => {
                let f = if saturated { flags::SATURATION } else { 0 };
                self.push_frame(StreamId::Exg, tick, codes, f);
            }
            Mode::EdgeAi => {
                let uv: Vec<f64> = codes.iter().map(|&c| cfg.code_to_uv(c)).collect();
                if let Some(frame) = self.classifier.push(&uv) {
                    self.edge_energy_mj += self.classifier.energy_per_decision_mj();
                    self.drain_battery_mj(self.classifier.energy_per_decision_mj());
                    let p = self.packet(StreamId::EdgeAi, flags::EDGE_AI, tick, vec![frame]);
                    self.enqueue(p);
                }
            }
            _ => {}
        }
        self.next.exg = Some(tick + period(cfg.sample_rate));
    }

    fn on_ppg(&mut self, tick: u64) {
        self.tasks.bump(TaskKind::Ppg);
        let v = (self.source.ppg(tick) * PPG_CODES_PER_AU).round() as i32;
        self.push_frame(StreamId::Ppg, tick, vec![v], 0);
        self.next.ppg = Some(tick + period(PPG_RATE));
    }

    fn on_imu(&mut self, tick: u64) {
        self.tasks.bump(TaskKind::Imu);
        let a = self.source.imu(tick);
        let frame = a.iter().map(|g| (g * IMU_CODES_PER_G).round() as i32).collect();
        self.push_frame(StreamId::Imu, tick, frame, 0);
        self.next.imu = Some(tick + period(IMU_RATE));
    }

    fn housekeeping(&mut self) {
        self.tasks.bump(TaskKind::PowerMgmt);
        if self.mode == Mode::Streaming {
            self.emit_status();
        }
        if matches!(self.mode, Mode::Idle | Mode::Charging) {
            self.tasks.bump(TaskKind::BleAdvertise);
        }
    }

    fn drain_battery_mj(&mut self, mj: f64) {
        if self.mode == Mode::Charging || self.battery_level <= 0.0 {
            return;
        }
        // mWh = mJ / 3600
        self.battery_level -= mj / 3600.0 / self.config.battery.energy_mwh();
        if !self.battery_low_raised && self.battery_level < BATTERY_LOW {
            self.battery_low_raised = true;
            self.events.push(DeviceEvent::BatteryLow { tick: self.tick, level: self.battery_level.max(0.0) });
        }
        if self.battery_level <= 0.0 {
            self.battery_level = 0.0;
            self.events.push(DeviceEvent::BatteryDepleted { tick: self.tick });
            self.contact = None;
            self.enter_mode(Mode::Idle);
        }
    }

    fn ble_send(&mut self) -> Vec<Outgoing> {
        if self.outbox.is_empty() {
            return Vec::new();
        }
        self.tasks.bump(TaskKind::BleSend);
        self.outbox.drain(..).collect()
    }

    /// Advances the simulated clock by `dt` seconds and returns the packets
    /// handed to the link in that interval.
    pub fn step(&mut self, dt: f64) -> Vec<Outgoing> {
        let end = self.tick + (dt * TICK_RATE as f64).round() as u64;
        let housekeeping = (HOUSEKEEPING_PERIOD_S * TICK_RATE as f64) as u64;
        loop {
            let contact_end = self.contact.as_ref().map(|c| c.end_tick);
            let candidates = [self.next.exg, self.next.ppg, self.next.imu, Some(self.next_housekeeping), contact_end];
            let Some(t) = candidates.into_iter().flatten().min().filter(|&t| t < end) else { break };
            self.advance_to(t);
            if self.next.exg == Some(t) {
                self.on_exg(t);
            }
            if self.next.ppg == Some(t) {
                self.on_ppg(t);
            }
            if self.next.imu == Some(t) {
                self.on_imu(t);
            }
            if self.next_housekeeping == t {
                self.housekeeping();
                self.next_housekeeping = t + housekeeping;
            }
            if contact_end == Some(t) {
                self.sm.push_back(SmEvent::ContactDone);
                while let Some(ev) = self.sm.pop_front() {
                    self.tasks.bump(TaskKind::StateMachine);
                    if let SmEvent::ContactDone = ev {
                        self.finish_contact();
                    }
                }
            }
        }
        self.advance_to(end);
        self.ble_send()
    }

    /// Moves the clock forward, charging the battery for the interval.
    fn advance_to(&mut self, tick: u64) {
        if tick > self.tick {
            let dt_s = ticks_to_s(tick - self.tick);
            self.tick = tick;
            let mj = self.power.total_mw * dt_s;
            self.drain_battery_mj(mj);
        }
    }
}
