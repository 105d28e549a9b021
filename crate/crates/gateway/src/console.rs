//! Console channel: the JSON message schema and the engine that turns a
//! running session into console messages and console messages into
//! device commands.
//!
//! Every message is one JSON object with `"v": 1` and a `"type"` field.
//! See the README for the full schema.

use std::io::Write;

use biogap_core::afe::{AfeConfig, ContactReport};
use biogap_core::power::{PowerReport, Preset};
use biogap_core::proto::Delivery;
use biogap_core::runtime::{Command, Mode, NackReason, Reply, StreamId};
use biogap_core::ssvep::{SlidingClassifier, SsvepConfig, ONLINE_HOP_S, ONLINE_WINDOW_S};
use serde::{Deserialize, Serialize};

use crate::alarm::{AlarmEvent, AlarmMonitor};
use crate::live::{DisplayFrames, LiveView, ViewSpec};
use crate::reassembly::Reassembler;
use crate::session::{Session, SessionRunner};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Device command; `id` is echoed in the ack or nack.
    Command { id: u64, command: Command },
    /// Replaces the display view (filters, scale, channels).
    SetView { view: ViewSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Device,
    Host,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkStatus {
    pub connected: bool,
    pub delivered: u64,
    pub gaps: u64,
    pub overflow_count: u64,
    pub backlog_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { session_id: String, preset: Preset, afe: AfeConfig, mode: Mode, view: ViewSpec },
    Frames {
        stream: StreamId,
        #[serde(flatten)]
        frames: DisplayFrames,
    },
    Status { time_s: f64, mode: Mode, afe: AfeConfig, battery_permille: Option<u16>, link: LinkStatus },
    Alarm { alarm: AlarmEvent },
    /// The command was applied; `afe` and `mode` are the device state after it.
    Ack {
        id: u64,
        afe: AfeConfig,
        mode: Mode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        power: Option<PowerReport>,
    },
    /// The command was refused; `afe` and `mode` are the unchanged state the
    /// controls revert to.
    Nack { id: u64, reason: NackReason, detail: String, afe: AfeConfig, mode: Mode },
    Contact { time_s: f64, report: ContactReport },
    Decision { time_s: f64, source: DecisionSource, decision_hz: Option<f64>, scores: Vec<f64> },
    /// The view now in force.
    View { view: ViewSpec },
    ViewRejected { detail: String, view: ViewSpec },
    Error { detail: String },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    msg: T,
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Envelope { v: SCHEMA_VERSION, msg: self }).expect("message serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        parse_versioned(text)
    }
}

impl ClientMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Envelope { v: SCHEMA_VERSION, msg: self }).expect("message serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        parse_versioned(text)
    }
}

fn parse_versioned<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, String> {
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if env.v != SCHEMA_VERSION {
        return Err(format!("schema version {} not supported (expected {SCHEMA_VERSION})", env.v));
    }
    Ok(env.msg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveOptions {
    pub view: ViewSpec,
    /// Run the SSVEP classifier on the received EEG as well.
    pub host_ssvep: Option<SsvepConfig>,
    /// Simulated seconds between status messages.
    pub status_period_s: f64,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self { view: ViewSpec::default(), host_ssvep: None, status_period_s: 1.0 }
    }
}

struct HostClassifier {
    config: SsvepConfig,
    layout: Option<(u32, u16)>,
    inner: Option<SlidingClassifier>,
}

/// A running session seen through the console: advances the simulation,
/// records, and produces the outgoing message stream.
pub struct LiveSession<W: Write> {
    runner: SessionRunner<W>,
    view: LiveView,
    alarms: AlarmMonitor,
    decoder: Reassembler,
    host: Option<HostClassifier>,
    status_period_s: f64,
    next_status_s: f64,
}

impl<W: Write> LiveSession<W> {
    pub fn new(runner: SessionRunner<W>, options: LiveOptions) -> Result<Self, crate::live::ViewError> {
        let decoder = Reassembler::new(runner.device().afe_config());
        let time = runner.time_s();
        let mut alarms = AlarmMonitor::default();
        alarms.expect_traffic(runner.device().mode().acquiring(), time);
        Ok(Self {
            view: LiveView::new(options.view)?,
            host: options.host_ssvep.map(|config| HostClassifier { config, layout: None, inner: None }),
            runner,
            alarms,
            decoder,
            status_period_s: options.status_period_s,
            next_status_s: time,
        })
    }

    pub fn runner(&self) -> &SessionRunner<W> {
        &self.runner
    }

    pub fn view(&self) -> &ViewSpec {
        self.view.spec()
    }

    pub fn hello(&self) -> ServerMessage {
        let d = self.runner.device();
        ServerMessage::Hello {
            session_id: self.runner_id(),
            preset: d.preset(),
            afe: d.afe_config(),
            mode: d.mode(),
            view: self.view.spec().clone(),
        }
    }

    fn runner_id(&self) -> String {
        self.runner.id().to_string()
    }

    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match ClientMessage::from_json(text) {
            Ok(msg) => self.handle(msg),
            Err(detail) => vec![ServerMessage::Error { detail }],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Command { id, command } => {
                let reply = self.runner.command(command);
                let (afe, mode) = (self.runner.device().afe_config(), self.runner.device().mode());
                let now = self.runner.time_s();
                self.alarms.expect_traffic(mode.acquiring(), now);
                vec![match reply {
                    Reply::Ack { power } => ServerMessage::Ack { id, afe, mode, power },
                    Reply::Nack { reason, detail } => ServerMessage::Nack { id, reason, detail, afe, mode },
                }]
            }
            ClientMessage::SetView { view } => match self.view.set_spec(view) {
                Ok(()) => vec![ServerMessage::View { view: self.view.spec().clone() }],
                Err(e) => vec![ServerMessage::ViewRejected { detail: e.to_string(), view: self.view.spec().clone() }],
            },
        }
    }

    /// Advances the session by `dt` simulated seconds.
    pub fn step(&mut self, dt: f64) -> Vec<ServerMessage> {
        let arrived = self.runner.step(dt);
        let mut out = self.receive(&arrived);
        let now = self.runner.time_s();
        let mode = self.runner.device().mode();
        self.alarms.expect_traffic(mode.acquiring(), now);
        out.extend(self.alarms.poll(now).map(|alarm| ServerMessage::Alarm { alarm }));
        if now + 1e-9 >= self.next_status_s {
            self.next_status_s = now + self.status_period_s;
            out.push(self.status());
        }
        out
    }

    pub fn status(&self) -> ServerMessage {
        let link = self.runner.link();
        let stats = link.stats();
        ServerMessage::Status {
            time_s: self.runner.time_s(),
            mode: self.runner.device().mode(),
            afe: self.decoder.afe(),
            battery_permille: self.decoder.battery_permille(),
            link: LinkStatus {
                connected: !self.alarms.active().contains(&crate::alarm::AlarmKind::LinkLoss),
                delivered: stats.delivered,
                gaps: self.decoder.total_gaps(),
                overflow_count: link.buffer().overflow_count(),
                backlog_bits: stats.occupancy_bits,
            },
        }
    }

    fn receive(&mut self, arrived: &[Delivery]) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        for d in arrived {
            self.decoder.push(&d.packet);
            out.extend(self.alarms.received(d.arrival).map(|alarm| ServerMessage::Alarm { alarm }));
        }
        if let Some(level) = self.decoder.battery_permille() {
            out.extend(self.alarms.battery(level as f64 / 1000.0, self.runner.time_s()).map(|alarm| ServerMessage::Alarm { alarm }));
        }
        let streams = self.decoder.take_streams();
        let t = |tick: u64| tick as f64 / biogap_core::runtime::TICK_RATE as f64;
        for frames in self.view.push(&streams.exg) {
            out.push(ServerMessage::Frames { stream: StreamId::Exg, frames });
        }
        if let Some(host) = self.host.as_mut() {
            for f in &streams.exg {
                let layout = (f.afe.sample_rate, f.afe.channels_enabled);
                if host.layout != Some(layout) {
                    host.layout = Some(layout);
                    host.inner =
                        SlidingClassifier::new(f.afe.n_enabled(), f.afe.sample_rate as f64, ONLINE_WINDOW_S, ONLINE_HOP_S, host.config.clone()).ok();
                }
                let uv: Vec<f64> = f.codes.iter().map(|&c| f.afe.code_to_uv(c)).collect();
                if let Some(Ok(Some(d))) = host.inner.as_mut().map(|c| c.push(&uv)) {
                    out.push(ServerMessage::Decision {
                        time_s: t(f.tick),
                        source: DecisionSource::Host,
                        decision_hz: d.result.decision,
                        scores: d.result.scores.iter().map(|s| s.ncca).collect(),
                    });
                }
            }
        }
        for (tick, d) in streams.decisions {
            out.push(ServerMessage::Decision { time_s: t(tick), source: DecisionSource::Device, decision_hz: d.decision_hz, scores: d.scores });
        }
        for (tick, report) in streams.contacts {
            out.push(ServerMessage::Contact { time_s: t(tick), report });
        }
        out
    }

    pub fn finish(self) -> (Session, Option<W>) {
        self.runner.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_carry_version() {
        let m = ClientMessage::Command { id: 3, command: Command::SetRate { rate: 1000 } };
        let json = m.to_json();
        assert_eq!(json, r#"{"v":1,"type":"command","id":3,"command":{"cmd":"set_rate","rate":1000}}"#);
        assert_eq!(ClientMessage::from_json(&json).unwrap(), m);
        assert!(ClientMessage::from_json(r#"{"v":2,"type":"set_view","view":{}}"#).unwrap_err().contains("version"));
        let v = ClientMessage::from_json(r#"{"v":1,"type":"set_view","view":{"scale":2}}"#).unwrap();
        assert!(matches!(v, ClientMessage::SetView { view } if view.scale == 2.0 && view.max_points_per_s == Some(60.0)));
    }

    #[test]
    fn server_messages_round_trip() {
        let m = ServerMessage::Alarm {
            alarm: AlarmEvent::Raised { kind: crate::alarm::AlarmKind::LinkLoss, time_s: 1.5, detail: "x".into() },
        };
        assert_eq!(ServerMessage::from_json(&m.to_json()).unwrap(), m);
        let f = ServerMessage::Frames {
            stream: StreamId::Exg,
            frames: DisplayFrames { tick: 0, rate_hz: 50.0, channels: vec![0], points: vec![vec![1.0]] },
        };
        let json = f.to_json();
        assert!(json.starts_with(r#"{"v":1,"type":"frames","stream":"exg","tick":0"#), "{json}");
        assert_eq!(ServerMessage::from_json(&json).unwrap(), f);
    }
}
