use biogap_core::proto::{
    flags, read_stream, split_packet, transmit, DecodeError, DeviceBuffer, LinkModel, Packet, SeqTracker, StreamItem, BYTES_PER_CODE,
    OVERHEAD,
};
use proptest::prelude::*;

fn packet() -> impl Strategy<Value = Packet> {
    (1usize..=16, 0usize..=20).prop_flat_map(|(width, frames)| {
        (
            any::<u8>(),
            any::<u8>(),
            any::<u32>(),
            any::<u64>(),
            prop::collection::vec(prop::collection::vec(-(1i32 << 23)..(1i32 << 23), width), frames),
        )
            .prop_map(|(stream_id, flags, seq, timestamp_ticks, frames)| Packet { stream_id, flags, seq, timestamp_ticks, frames })
    })
}

/// Dropout windows as sorted, non-overlapping (start, end) pairs within 0..horizon.
fn dropouts(horizon: f64) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..horizon, 0.001..0.5f64), 0..6).prop_map(|mut v| {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (s, len) in v {
            let start = out.last().map_or(s, |&(_, e)| s.max(e + 1e-3));
            out.push((start, start + len));
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn encode_decode_round_trip(p in packet()) {
        let bytes = p.encode().unwrap();
        prop_assert_eq!(bytes.len(), OVERHEAD + p.frame_count() * p.width() * BYTES_PER_CODE);
        let back = Packet::decode(&bytes).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn any_single_bit_flip_is_detected(p in packet(), pick in any::<prop::sample::Index>()) {
        let bytes = p.encode().unwrap();
        let bit = pick.index(bytes.len() * 8);
        let mut damaged = bytes.clone();
        damaged[bit / 8] ^= 1 << (bit % 8);
        prop_assert!(Packet::decode(&damaged).is_err());
    }

    #[test]
    fn stream_splitting_recovers_every_packet(ps in prop::collection::vec(packet(), 1..12)) {
        let buf: Vec<u8> = ps.iter().flat_map(|p| p.encode().unwrap()).collect();
        let items = read_stream(&buf);
        let got: Vec<&Packet> = items.iter().filter_map(|i| match i {
            StreamItem::Packet { packet, .. } => Some(packet),
            _ => None,
        }).collect();
        prop_assert_eq!(got.len(), ps.len());
        for (g, p) in got.iter().zip(&ps) {
            prop_assert_eq!(*g, p);
        }
    }

    #[test]
    fn damaged_packet_is_skipped_and_neighbours_survive(ps in prop::collection::vec(packet(), 3..8), victim in any::<prop::sample::Index>(), pick in any::<prop::sample::Index>()) {
        let encoded: Vec<Vec<u8>> = ps.iter().map(|p| p.encode().unwrap()).collect();
        let v = victim.index(ps.len());
        let mut buf = Vec::new();
        for (i, e) in encoded.iter().enumerate() {
            let mut e = e.clone();
            if i == v {
                // flip a payload or CRC byte, leaving the header findable
                let k = 19 + pick.index(e.len() - 19);
                e[k] ^= 0x5a;
            }
            buf.extend(e);
        }
        let items = read_stream(&buf);
        let good: Vec<&Packet> = items.iter().filter_map(|i| match i {
            StreamItem::Packet { packet, .. } => Some(packet),
            _ => None,
        }).collect();
        let want: Vec<&Packet> = ps.iter().enumerate().filter(|&(i, _)| i != v).map(|(_, p)| p).collect();
        prop_assert_eq!(good, want);
        // damage in the last packet cannot be told from a cut-off tail
        prop_assert_eq!(items.len(), ps.len());
    }

    #[test]
    fn link_invariants_hold_under_random_dropouts(
        drops in dropouts(4.0),
        capacity in 2e4..2e6f64,
        buffer_bits in 2_000u64..200_000,
        latency_ms in 0.0..20.0f64,
        n in 1usize..200,
        width in 1usize..=16,
    ) {
        let link = LinkModel { capacity_bps: capacity, dropouts: Vec::new(), latency_ms }.with_dropouts(drops.clone());
        let period = 4.0 / n as f64;
        let packets: Vec<(f64, Packet)> = (0..n)
            .map(|i| (i as f64 * period, Packet { stream_id: 0, flags: 0, seq: i as u32, timestamp_ticks: i as u64, frames: vec![vec![1; width]; 4] }))
            .collect();
        let bits = packets[0].1.encode().unwrap().len() as u64 * 8;
        let out = transmit(packets, link.clone(), DeviceBuffer::new(buffer_bits), None).unwrap();
        let s = out.stats;
        prop_assert!(s.conserved());
        prop_assert_eq!(s.sent, n as u64);
        prop_assert_eq!(s.delivered + s.dropped, n as u64);
        prop_assert_eq!(s.dropped, out.overflow_count);

        let mut tracker = SeqTracker::default();
        let mut last_end = f64::NEG_INFINITY;
        let mut overflow_flags = 0;
        for d in &out.deliveries {
            tracker.observe(d.packet.seq);
            // FIFO, one packet on the air at a time, never during a dropout
            prop_assert!(d.tx_start >= last_end - 1e-12);
            prop_assert!(d.tx_start >= d.enqueued_at);
            prop_assert!(drops.iter().all(|&(a, b)| d.tx_end <= a + 1e-12 || d.tx_start >= b - 1e-12));
            // throughput bound: a packet takes at least bits/capacity
            prop_assert!(d.tx_end - d.tx_start >= d.bits() as f64 / capacity - 1e-12);
            prop_assert!((d.arrival - d.tx_end - latency_ms / 1e3).abs() < 1e-9);
            last_end = d.tx_end;
            overflow_flags += d.packet.has_flag(flags::OVERFLOW) as u64;
        }
        prop_assert_eq!(tracker.gaps, out.overflow_count);
        prop_assert_eq!(tracker.stale, 0);
        prop_assert!((overflow_flags > 0) == (out.overflow_count > 0));
        prop_assert!(s.max_occupancy_bits <= buffer_bits.max(bits));
        // total delivered bits cannot exceed what the link could carry while up
        if let Some(last) = out.deliveries.last() {
            let up: f64 = last.tx_end - drops.iter().map(|&(a, b)| (b.min(last.tx_end) - a).max(0.0)).sum::<f64>();
            prop_assert!(s.delivered_bits as f64 <= capacity * up + 1e-6);
        }
    }
}

#[test]
fn header_damage_reports_what_broke() {
    let p = Packet { stream_id: 1, flags: 0, seq: 7, timestamp_ticks: 9, frames: vec![vec![1, 2, 3]] };
    let bytes = p.encode().unwrap();
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert_eq!(Packet::decode(&bad), Err(DecodeError::BadMagic));
    // a lone cut-short packet fails its CRC; the splitter sees it needs more bytes
    assert_eq!(Packet::decode(&bytes[..bytes.len() - 1]), Err(DecodeError::BadCrc));
    assert_eq!(split_packet(&bytes[..bytes.len() - 1]), Err(DecodeError::Truncated));
    assert_eq!(split_packet(&bytes), Ok(bytes.len()));
}

#[test]
fn trailing_partial_packet_is_reported() {
    let p = Packet { stream_id: 0, flags: 0, seq: 0, timestamp_ticks: 0, frames: vec![vec![5; 8]; 10] };
    let mut buf = p.encode().unwrap();
    let second = p.encode().unwrap();
    buf.extend_from_slice(&second[..second.len() / 2]);
    let items = read_stream(&buf);
    assert!(matches!(items[0], StreamItem::Packet { .. }));
    assert!(matches!(items.last().unwrap(), StreamItem::Truncated { .. }));
}
