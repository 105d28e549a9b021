use std::f64::consts::PI;

use biogap_core::afe::{AfeConfig, ContactVerdict, NUM_CHANNELS};
use biogap_core::power::{Battery, Preset};
use biogap_core::proto::LinkModel;
use biogap_core::runtime::{Command, Device, DeviceConfig, NackReason, StreamId, SynthSource};
use biogap_core::ssvep::{SsvepConfig, ONLINE_HOP_S, ONLINE_WINDOW_S};
use biogap_gateway::alarm::{AlarmEvent, AlarmKind};
use biogap_gateway::classify::{host_classify, offline_classify};
use biogap_gateway::console::{ClientMessage, LiveOptions, LiveSession, ServerMessage};
use biogap_gateway::live::{FilterStage, LiveView, ViewSpec};
use biogap_gateway::reassembly::{ExgFrame, Reassembler};
use biogap_gateway::recording::Recording;
use biogap_gateway::session::{run_session_in_memory, SessionConfig, SessionRunner};
use sha2::{Digest, Sha256};

fn live(cfg: &SessionConfig, device: Device, options: LiveOptions) -> LiveSession<Vec<u8>> {
    let runner = SessionRunner::new(cfg.id.clone(), device, cfg.link.clone(), cfg.buffer_bits, Vec::new(), cfg.start_wall_ms).unwrap();
    LiveSession::new(runner, options).unwrap()
}

fn run_for(s: &mut LiveSession<Vec<u8>>, seconds: f64) -> Vec<ServerMessage> {
    let steps = (seconds / 0.01).round() as usize;
    (0..steps).flat_map(|_| s.step(0.01)).collect()
}

fn start(s: &mut LiveSession<Vec<u8>>) {
    let reply = s.handle(ClientMessage::Command { id: 0, command: Command::Start });
    assert!(matches!(reply[0], ServerMessage::Ack { .. }), "{reply:?}");
}

#[test]
fn open_lead_is_the_only_open_channel() {
    let mut coupling = [1.0; NUM_CHANNELS];
    coupling[5] = 0.0;
    let cfg = SessionConfig { coupling: Some(coupling), ..SessionConfig::new(Preset::Headband, LinkModel::default(), 10.0, 3) };
    let mut s = live(&cfg, cfg.device().unwrap(), LiveOptions::default());
    start(&mut s);
    run_for(&mut s, 1.0);
    let reply = s.handle(ClientMessage::Command { id: 1, command: Command::ContactCheck });
    assert!(matches!(reply[0], ServerMessage::Ack { id: 1, .. }), "{reply:?}");
    let reports: Vec<_> = run_for(&mut s, 3.0)
        .into_iter()
        .filter_map(|m| match m {
            ServerMessage::Contact { report, .. } => Some(report),
            _ => None,
        })
        .collect();
    assert_eq!(reports.len(), 1);
    let open: Vec<usize> = reports[0].channels.iter().filter(|c| c.verdict == ContactVerdict::Open).map(|c| c.channel).collect();
    assert_eq!(open, vec![5]);
    assert!(reports[0].channels.iter().filter(|c| c.channel != 5).all(|c| c.verdict == ContactVerdict::Good));
}

#[test]
fn dropout_raises_link_loss_promptly() {
    let link = LinkModel::default().with_dropouts([(3.0, 6.0)]);
    let cfg = SessionConfig::new(Preset::Headband, link, 10.0, 1);
    let mut s = live(&cfg, cfg.device().unwrap(), LiveOptions::default());
    start(&mut s);
    let mut raised = None;
    let mut cleared = None;
    let mut t = 0.0;
    for _ in 0..900 {
        t += 0.01;
        for m in s.step(0.01) {
            if let ServerMessage::Alarm { alarm } = m {
                match alarm {
                    AlarmEvent::Raised { kind: AlarmKind::LinkLoss, .. } => raised = raised.or(Some(t)),
                    AlarmEvent::Cleared { kind: AlarmKind::LinkLoss, .. } => cleared = cleared.or(Some(t)),
                    _ => {}
                }
            }
        }
    }
    let raised = raised.expect("link loss raised");
    assert!((3.0..=5.0).contains(&raised), "{raised}");
    let cleared = cleared.expect("link loss cleared");
    assert!((6.0..7.0).contains(&cleared), "{cleared}");
}

#[test]
fn rejected_rate_leaves_controls_unchanged() {
    let cfg = SessionConfig::new(Preset::Headband, LinkModel::default(), 5.0, 1);
    let mut s = live(&cfg, cfg.device().unwrap(), LiveOptions::default());
    start(&mut s);
    run_for(&mut s, 0.5);
    let before = s.runner().device().afe_config();
    let text = ClientMessage::Command { id: 7, command: Command::SetRate { rate: 300 } }.to_json();
    let reply = s.handle_text(&text);
    match &reply[0] {
        ServerMessage::Nack { id, reason, afe, .. } => {
            assert_eq!(*id, 7);
            assert_eq!(*reason, NackReason::InvalidArgument);
            assert_eq!(*afe, before);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(s.runner().device().afe_config(), before);
    // the next status still reports the old rate
    let status = run_for(&mut s, 1.5).into_iter().find(|m| matches!(m, ServerMessage::Status { .. })).unwrap();
    assert!(matches!(status, ServerMessage::Status { afe, .. } if afe.sample_rate == before.sample_rate));
}

#[test]
fn malformed_and_unversioned_text_gets_an_error() {
    let cfg = SessionConfig::new(Preset::Headband, LinkModel::default(), 1.0, 1);
    let mut s = live(&cfg, cfg.device().unwrap(), LiveOptions::default());
    assert!(matches!(s.handle_text("not json")[0], ServerMessage::Error { .. }));
    assert!(matches!(s.handle_text(r#"{"v":2,"type":"command","id":1,"command":{"cmd":"start"}}"#)[0], ServerMessage::Error { .. }));
    let ok = s.handle_text(r#"{"v":1,"type":"command","id":1,"command":{"cmd":"start"}}"#);
    assert!(matches!(ok[0], ServerMessage::Ack { id: 1, .. }));
    let hello = s.hello().to_json();
    assert_eq!(ServerMessage::from_json(&hello).unwrap(), s.hello());
}

#[test]
fn console_interaction_does_not_touch_the_recording() {
    let cfg = SessionConfig::new(Preset::Headband, LinkModel::default(), 6.0, 2);
    let plain = run_session_in_memory(&cfg).unwrap().1;

    let mut s = live(&cfg, cfg.device().unwrap(), LiveOptions { host_ssvep: Some(SsvepConfig::default()), ..Default::default() });
    start(&mut s);
    for i in 0..600 {
        if i == 100 {
            let view = ViewSpec { filters: vec![FilterStage::Notch { center_hz: 50.0, q: 30.0 }], scale: 2.0, ..Default::default() };
            assert!(matches!(s.handle(ClientMessage::SetView { view })[0], ServerMessage::View { .. }));
        }
        if i == 200 {
            let bad = ViewSpec { scale: 0.0, ..Default::default() };
            assert!(matches!(s.handle(ClientMessage::SetView { view: bad })[0], ServerMessage::ViewRejected { .. }));
        }
        s.step(0.01);
    }
    let viewed = s.finish().1.unwrap();
    assert_eq!(Sha256::digest(&plain), Sha256::digest(&viewed));
}

#[test]
fn live_notch_removes_mains() {
    let fs = 500.0;
    let afe = AfeConfig::default();
    let view = ViewSpec { filters: vec![FilterStage::Notch { center_hz: 50.0, q: 30.0 }], max_points_per_s: None, ..Default::default() };
    let mut lv = LiveView::new(view).unwrap();
    let period = biogap_core::runtime::TICK_RATE / afe.sample_rate as u64;
    let n = 10_000;
    let frames: Vec<ExgFrame> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let v = 1000.0 * (2.0 * PI * 50.0 * t).sin() + 100.0 * (2.0 * PI * 10.0 * t).sin();
            ExgFrame { tick: i as u64 * period, afe, codes: vec![(v / afe.lsb_uv()).round() as i32; NUM_CHANNELS] }
        })
        .collect();
    let out: Vec<Vec<f64>> = frames.chunks(50).flat_map(|c| lv.push(c)).flat_map(|d| d.points).collect();
    assert_eq!(out.len(), n);
    let ch0: Vec<f64> = out[n / 2..].iter().map(|p| p[0]).collect();
    let (mains, _) = biogap_core::dsp::tone_estimate(&ch0, 50.0, fs);
    let (alpha, _) = biogap_core::dsp::tone_estimate(&ch0, 10.0, fs);
    let rejection_db = 20.0 * (1000.0 / mains).log10();
    assert!(rejection_db > 40.0, "{rejection_db}");
    assert!((alpha / 100.0 - 1.0).abs() < 0.01, "{alpha}");
}

#[test]
fn host_classifier_matches_offline_on_the_same_record() {
    let cfg = SessionConfig::new(Preset::Headband, LinkModel::default(), 12.0, 6);
    let (_, bytes) = run_session_in_memory(&cfg).unwrap();
    let rec = Recording::parse(&bytes).unwrap();
    let mut r = Reassembler::new(rec.header.afe);
    for p in rec.packets() {
        r.push(p);
    }
    let (block, filled) = r.into_streams().exg_dense().unwrap();
    assert_eq!(filled, 0);
    let c = SsvepConfig::default();
    let online = host_classify(&block, ONLINE_WINDOW_S, ONLINE_HOP_S, &c).unwrap();
    let batch = offline_classify(&block, ONLINE_WINDOW_S, ONLINE_HOP_S, &c).unwrap();
    assert!(!online.is_empty());
    assert_eq!(online, batch);
}

#[test]
fn host_decisions_stream_during_a_live_session() {
    let cfg = SessionConfig::new(Preset::Headband, LinkModel::default(), 8.0, 6);
    let mut s = live(&cfg, cfg.device().unwrap(), LiveOptions { host_ssvep: Some(SsvepConfig::default()), ..Default::default() });
    start(&mut s);
    let msgs = run_for(&mut s, 8.0);
    let host = msgs.iter().filter(|m| matches!(m, ServerMessage::Decision { .. })).count();
    assert!(host > 0);
    let frames: usize = msgs
        .iter()
        .filter_map(|m| match m {
            ServerMessage::Frames { stream: StreamId::Exg, frames } => Some(frames.points.len()),
            _ => None,
        })
        .sum();
    // default view decimates to the display rate
    assert!(frames > 0 && frames <= 8 * 60 + 60, "{frames}");
}

#[test]
fn small_battery_raises_low_battery() {
    let cfg = SessionConfig::new(Preset::Headband, LinkModel::default(), 30.0, 1);
    let config = DeviceConfig { battery: Battery { capacity_mah: 0.05, voltage: 3.7 }, ..DeviceConfig::for_preset(Preset::Headband, 1) };
    let device = Device::new(config, Box::new(SynthSource::new(cfg.synth_spec()).unwrap())).unwrap();
    let mut s = live(&cfg, device, LiveOptions::default());
    start(&mut s);
    let low = run_for(&mut s, 25.0)
        .into_iter()
        .any(|m| matches!(m, ServerMessage::Alarm { alarm: AlarmEvent::Raised { kind: AlarmKind::BatteryLow, .. } }));
    assert!(low);
}
