use std::collections::BTreeMap;

use biogap_core::afe::{quantize, AfeConfig, CODE_MAX, CODE_MIN, GAINS, SAMPLE_RATES, VREF_UV};
use biogap_core::power::{power_report, Battery, DomainKind, Preset};
use biogap_core::runtime::{Command, Device, Mode, Outgoing, Reply, StreamId};
use proptest::prelude::*;

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        Just(Command::Start),
        Just(Command::Stop),
        Just(Command::ContactCheck),
        Just(Command::QueryPower),
        prop_oneof![prop::sample::select(GAINS.to_vec()), Just(5u8), Just(0u8)].prop_map(|gain| Command::SetGain { gain }),
        prop_oneof![prop::sample::select(SAMPLE_RATES[..4].to_vec()), Just(300u32)].prop_map(|rate| Command::SetRate { rate }),
        any::<u16>().prop_map(|mask| Command::SetMask { mask }),
        prop::sample::select(vec![Mode::Idle, Mode::Streaming, Mode::EdgeAi, Mode::ContactCheck, Mode::Charging])
            .prop_map(|mode| Command::SetMode { mode }),
        (prop::sample::select(vec![DomainKind::Ppg, DomainKind::Imu, DomainKind::Nrf, DomainKind::AdsAnalog, DomainKind::Gap9]), any::<bool>())
            .prop_map(|(domain, on)| Command::SetDomain { domain, on }),
    ]
}

fn script() -> impl Strategy<Value = Vec<(f64, Option<Command>)>> {
    prop::collection::vec((0.001..0.3f64, prop::option::of(command())), 1..25)
}

fn run(preset: Preset, seed: u64, script: &[(f64, Option<Command>)]) -> (Vec<Outgoing>, Vec<Reply>) {
    let mut d = Device::with_synth(preset, seed, 10.0).unwrap();
    let mut out = Vec::new();
    let mut replies = Vec::new();
    for (dt, cmd) in script {
        if let Some(c) = cmd {
            replies.push(d.command(c.clone()));
        }
        out.extend(d.step(*dt));
    }
    out.extend(d.flush_pending());
    (out, replies)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identical_inputs_give_identical_outputs(seed in any::<u64>(), s in script()) {
        let a = run(Preset::Headband, seed, &s);
        let b = run(Preset::Headband, seed, &s);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn streams_stay_well_formed(seed in 0u64..1000, s in script(), preset in prop::sample::select(Preset::ALL.to_vec())) {
        let (out, _) = run(preset, seed, &s);
        let mut last: BTreeMap<u8, (u32, u64, f64)> = BTreeMap::new();
        for o in &out {
            let p = &o.packet;
            prop_assert!(StreamId::from_u8(p.stream_id).is_some());
            prop_assert!(p.encode().is_ok());
            if let Some(&(seq, tick, t)) = last.get(&p.stream_id) {
                // no link in between: every stream is gapless and in order
                prop_assert_eq!(p.seq, seq + 1);
                prop_assert!(p.timestamp_ticks >= tick);
                prop_assert!(o.time_s >= t);
            } else {
                prop_assert_eq!(p.seq, 0);
            }
            last.insert(p.stream_id, (p.seq, p.timestamp_ticks, o.time_s));
        }
    }

    #[test]
    fn refused_commands_change_nothing(seed in 0u64..100, s in script(), probe in command()) {
        let mut d = Device::with_synth(Preset::Headband, seed, 10.0).unwrap();
        for (dt, cmd) in &s {
            if let Some(c) = cmd {
                d.command(c.clone());
            }
            d.step(*dt);
        }
        let (afe, mode) = (d.afe_config(), d.mode());
        let reply = d.command(probe);
        if !reply.is_ack() {
            prop_assert_eq!(d.afe_config(), afe);
            prop_assert_eq!(d.mode(), mode);
        }
    }

    #[test]
    fn battery_never_recovers(seed in 0u64..100, s in script()) {
        let mut d = Device::with_synth(Preset::Sleeve, seed, 10.0).unwrap();
        let mut level = d.battery_level();
        for (dt, cmd) in &s {
            if let Some(c) = cmd {
                d.command(c.clone());
            }
            d.step(*dt);
            prop_assert!(d.battery_level() <= level);
            level = d.battery_level();
        }
    }

    #[test]
    fn commands_round_trip_through_json(c in command()) {
        let text = serde_json::to_string(&c).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        prop_assert!(v["cmd"].is_string());
        prop_assert_eq!(serde_json::from_str::<Command>(&text).unwrap(), c);
    }

    #[test]
    fn quantizer_error_is_half_an_lsb(v in -3e6..3e6f64, gain in prop::sample::select(GAINS.to_vec())) {
        let cfg = AfeConfig { gain, ..AfeConfig::default() };
        let lsb = VREF_UV / gain as f64 / (1u64 << 23) as f64;
        let (code, clipped) = quantize(v, gain);
        prop_assert!((CODE_MIN..=CODE_MAX).contains(&code));
        if clipped {
            prop_assert!(v.abs() >= cfg.full_scale_uv() - lsb);
        } else {
            prop_assert!((code as f64 * lsb - v).abs() <= lsb / 2.0 + 1e-9);
            prop_assert!((cfg.code_to_uv(code) - v).abs() <= lsb / 2.0 + 1e-9);
        }
    }

    #[test]
    fn quantizer_is_monotone(a in -3e6..3e6f64, b in -3e6..3e6f64, gain in prop::sample::select(GAINS.to_vec())) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo, gain).0 <= quantize(hi, gain).0);
    }

    #[test]
    fn battery_life_is_energy_over_reported_power(mah in 10.0..2000.0f64, volts in 1.0..5.0f64, preset in prop::sample::select(Preset::ALL.to_vec())) {
        let r = power_report(preset, Battery { capacity_mah: mah, voltage: volts }).unwrap();
        let want = mah * volts / r.reported_total_mw();
        prop_assert!((r.battery_life_h.unwrap() - want).abs() < 1e-9 * want);
        let sum: f64 = r.domains.iter().filter(|d| d.active).map(|d| d.draw_mw).sum();
        prop_assert!((r.total_mw - sum).abs() < 1e-12);
    }
}

#[test]
fn streaming_payload_matches_rate_and_width() {
    let script: Vec<(f64, Option<Command>)> = vec![(0.0, Some(Command::Start)), (2.0, None)];
    let (out, replies) = run(Preset::Headband, 1, &script);
    assert!(replies[0].is_ack());
    let exg_frames: usize = out.iter().filter(|o| o.packet.stream_id == StreamId::Exg as u8).map(|o| o.packet.frame_count()).sum();
    assert_eq!(exg_frames, 1000);
    assert!(out.iter().filter(|o| o.packet.stream_id == StreamId::Exg as u8).all(|o| o.packet.width() == 16));
}
