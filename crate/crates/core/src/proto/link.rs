//! Constrained link with dropout windows and a drop-oldest device buffer.
//!
//! Time is simulated seconds on a clock advanced only by the caller. Packets
//! leave the buffer one at a time: a transmission occupies the link for
//! `bits / capacity_bps` and never straddles a dropout window, so a packet
//! that would not finish before the next dropout waits until it ends. The
//! overflow flag is stamped when a packet starts transmitting, which is when
//! its bytes are serialized.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::packet::{flags, FramingError, Packet};

/// Aggregate link throughput in bits per second.
pub const BLE_CAPACITY_BPS: f64 = 1.4e6;
/// Volatile-memory buffer size in bits.
pub const DEFAULT_BUFFER_BITS: u64 = 128 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub capacity_bps: f64,
    pub dropouts: Vec<Dropout>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("capacity must be positive, got {0}")]
    Capacity(f64),
    #[error("latency must be non-negative, got {0}")]
    Latency(f64),
    #[error("dropout {index} is empty or malformed")]
    Dropout { index: usize },
    #[error("dropouts {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("cannot parse link spec `{0}`")]
    Parse(String),
}

impl Default for LinkModel {
    fn default() -> Self {
        Self { capacity_bps: BLE_CAPACITY_BPS, dropouts: Vec::new(), latency_ms: 0.0 }
    }
}

impl LinkModel {
    pub fn with_dropouts(mut self, dropouts: impl IntoIterator<Item = (f64, f64)>) -> Self {
        self.dropouts = dropouts.into_iter().map(|(start, end)| Dropout { start, end }).collect();
        self.dropouts.sort_by(|a, b| a.start.total_cmp(&b.start));
        self
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.capacity_bps > 0.0 && self.capacity_bps.is_finite()) {
            return Err(LinkError::Capacity(self.capacity_bps));
        }
        if !(self.latency_ms >= 0.0 && self.latency_ms.is_finite()) {
            return Err(LinkError::Latency(self.latency_ms));
        }
        for (i, d) in self.dropouts.iter().enumerate() {
            if !(d.start.is_finite() && d.end.is_finite() && d.end > d.start) {
                return Err(LinkError::Dropout { index: i });
            }
        }
        let mut order: Vec<usize> = (0..self.dropouts.len()).collect();
        order.sort_by(|&a, &b| self.dropouts[a].start.total_cmp(&self.dropouts[b].start));
        for w in order.windows(2) {
            if self.dropouts[w[1]].start < self.dropouts[w[0]].end {
                return Err(LinkError::Overlap(w[0], w[1]));
            }
        }
        Ok(())
    }

    pub fn latency_s(&self) -> f64 {
        self.latency_ms * 1e-3
    }

    pub fn is_down(&self, t: f64) -> bool {
        self.dropouts.iter().any(|d| t >= d.start && t < d.end)
    }

    pub fn tx_duration(&self, bits: u64) -> f64 {
        bits as f64 / self.capacity_bps
    }

    /// Earliest start at or after `t` for a transmission of `duration` that
    /// overlaps no dropout.
    pub fn clear_start(&self, mut t: f64, duration: f64) -> f64 {
        loop {
            let blocking = self.dropouts.iter().filter(|d| t < d.end && t + duration > d.start).map(|d| d.end).fold(f64::NEG_INFINITY, f64::max);
            if blocking == f64::NEG_INFINITY {
                return t;
            }
            t = blocking;
        }
    }
}

impl std::str::FromStr for LinkModel {
    type Err = LinkError;

    /// `ble`, `ideal`, or a comma list of `<rate>` (`1.4M`, `192k`, `9600`),
    /// `latency=<ms>` and `drop=<start>-<end>` items, e.g.
    /// `1.4M,latency=5,drop=10-20,drop=40-45`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || LinkError::Parse(s.to_string());
        let mut link = LinkModel::default();
        let mut dropouts = Vec::new();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            if let Some(ms) = item.strip_prefix("latency=") {
                link.latency_ms = ms.trim_end_matches("ms").parse().map_err(|_| err())?;
            } else if let Some(range) = item.strip_prefix("drop=") {
                let (a, b) = range.split_once('-').ok_or_else(err)?;
                dropouts.push((a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?));
            } else if item == "ble" {
                link.capacity_bps = BLE_CAPACITY_BPS;
            } else if item == "ideal" {
                link.capacity_bps = f64::MAX / 4.0;
            } else {
                link.capacity_bps = parse_rate(item).ok_or_else(err)?;
            }
        }
        let link = link.with_dropouts(dropouts);
        link.validate()?;
        Ok(link)
    }
}

fn parse_rate(s: &str) -> Option<f64> {
    let s = s.trim_end_matches("bps").trim_end_matches("bit/s");
    let (num, scale) = match s.chars().last()? {
        'k' | 'K' => (&s[..s.len() - 1], 1e3),
        'M' => (&s[..s.len() - 1], 1e6),
        'G' => (&s[..s.len() - 1], 1e9),
        _ => (s, 1.0),
    };
    num.parse::<f64>().ok().map(|v| v * scale)
}

#[derive(Debug, Clone)]
struct Queued {
    enqueued_at: f64,
    bits: u64,
    packet: Packet,
}

/// FIFO of packets awaiting the link, bounded in bits.
#[derive(Debug, Clone)]
pub struct DeviceBuffer {
    capacity_bits: u64,
    occupancy_bits: u64,
    overflow_count: u64,
    queue: VecDeque<Queued>,
}

impl Default for DeviceBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_BITS)
    }
}

impl DeviceBuffer {
    pub fn new(capacity_bits: u64) -> Self {
        Self { capacity_bits, occupancy_bits: 0, overflow_count: 0, queue: VecDeque::new() }
    }

    pub fn capacity_bits(&self) -> u64 {
        self.capacity_bits
    }

    pub fn occupancy_bits(&self) -> u64 {
        self.occupancy_bits
    }

    pub fn overflow_count(&self) -> u64 {
        self.overflow_count
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Appends a packet, evicting from the front until it fits. Returns the
    /// number of evicted packets. A packet larger than the whole buffer is
    /// itself discarded.
    fn push(&mut self, item: Queued) -> u64 {
        let mut dropped = 0;
        if item.bits > self.capacity_bits {
            self.overflow_count += 1;
            return 1;
        }
        while self.occupancy_bits + item.bits > self.capacity_bits {
            let old = self.queue.pop_front().expect("occupancy implies a queued packet");
            self.occupancy_bits -= old.bits;
            self.overflow_count += 1;
            dropped += 1;
        }
        self.occupancy_bits += item.bits;
        self.queue.push_back(item);
        dropped
    }

    fn pop(&mut self) -> Option<Queued> {
        let item = self.queue.pop_front()?;
        self.occupancy_bits -= item.bits;
        Some(item)
    }

    fn front(&self) -> Option<&Queued> {
        self.queue.front()
    }
}

/// A packet that crossed the link.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub enqueued_at: f64,
    pub tx_start: f64,
    pub tx_end: f64,
    pub arrival: f64,
    pub packet: Packet,
    pub bytes: Vec<u8>,
}

impl Delivery {
    pub fn bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: u64,
    /// Packets that have left the buffer onto the link.
    pub transmitted: u64,
    /// Packets that have arrived at the receiver.
    pub delivered: u64,
    pub dropped: u64,
    pub buffered: u64,
    pub in_flight: u64,
    pub delivered_bits: u64,
    pub occupancy_bits: u64,
    pub max_occupancy_bits: u64,
}

impl LinkStats {
    /// sent = delivered + in flight + dropped + buffered.
    pub fn conserved(&self) -> bool {
        self.sent == self.delivered + self.in_flight + self.dropped + self.buffered && self.transmitted == self.delivered + self.in_flight
    }
}

/// Event-driven link and buffer simulation.
#[derive(Debug, Clone)]
pub struct LinkSim {
    link: LinkModel,
    buffer: DeviceBuffer,
    now: f64,
    link_free_at: f64,
    overflow_pending: bool,
    in_flight: VecDeque<Delivery>,
    arrived: VecDeque<Delivery>,
    stats: LinkStats,
}

impl LinkSim {
    pub fn new(link: LinkModel, buffer: DeviceBuffer) -> Result<Self, LinkError> {
        link.validate()?;
        Ok(Self {
            link,
            buffer,
            now: 0.0,
            link_free_at: f64::NEG_INFINITY,
            overflow_pending: false,
            in_flight: VecDeque::new(),
            arrived: VecDeque::new(),
            stats: LinkStats::default(),
        })
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn buffer(&self) -> &DeviceBuffer {
        &self.buffer
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn stats(&self) -> LinkStats {
        let mut s = self.stats;
        s.buffered = self.buffer.len() as u64;
        s.in_flight = self.in_flight.len() as u64;
        s.dropped = self.buffer.overflow_count();
        s.occupancy_bits = self.buffer.occupancy_bits();
        s
    }

    /// Hands a packet to the buffer at time `at` (not earlier than the clock).
    pub fn offer(&mut self, at: f64, packet: Packet) -> Result<(), FramingError> {
        let at = at.max(self.now);
        self.advance(at);
        let bits = packet.encode()?.len() as u64 * 8;
        self.stats.sent += 1;
        if self.buffer.push(Queued { enqueued_at: at, bits, packet }) > 0 {
            self.overflow_pending = true;
        }
        self.stats.max_occupancy_bits = self.stats.max_occupancy_bits.max(self.buffer.occupancy_bits());
        // an idle link picks the packet up immediately
        self.advance(at);
        Ok(())
    }

    /// Runs the link up to and including time `until`.
    pub fn advance(&mut self, until: f64) {
        while let Some(head) = self.buffer.front() {
            let duration = self.link.tx_duration(head.bits);
            let start = self.link.clear_start(self.link_free_at.max(head.enqueued_at), duration);
            if start > until {
                break;
            }
            let item = self.buffer.pop().expect("front exists");
            let mut packet = item.packet;
            if std::mem::take(&mut self.overflow_pending) {
                packet.flags |= flags::OVERFLOW;
            }
            let bytes = packet.encode().expect("validated on offer");
            let end = start + duration;
            self.link_free_at = end;
            self.stats.transmitted += 1;
            self.in_flight.push_back(Delivery {
                enqueued_at: item.enqueued_at,
                tx_start: start,
                tx_end: end,
                arrival: end + self.link.latency_s(),
                packet,
                bytes,
            });
        }
        while self.in_flight.front().is_some_and(|d| d.arrival <= until) {
            let d = self.in_flight.pop_front().expect("front exists");
            self.stats.delivered += 1;
            self.stats.delivered_bits += d.bits();
            self.arrived.push_back(d);
        }
        self.now = self.now.max(until);
    }

    /// Takes everything that has arrived so far.
    pub fn take_arrived(&mut self) -> Vec<Delivery> {
        self.arrived.drain(..).collect()
    }

    /// Runs until the buffer and link are empty; returns the finishing time.
    pub fn drain(&mut self) -> f64 {
        self.advance(f64::INFINITY);
        self.now = self.arrived.back().map_or(self.now, |d| d.arrival.max(self.link_free_at));
        self.now
    }
}

/// Result of pushing a timestamped packet sequence through a link.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub deliveries: Vec<Delivery>,
    pub stats: LinkStats,
    pub overflow_count: u64,
}

/// Sends `(time, packet)` pairs in order and runs the link until `horizon`
/// (or until drained when `None`).
pub fn transmit(
    packets: impl IntoIterator<Item = (f64, Packet)>,
    link: LinkModel,
    buffer: DeviceBuffer,
    horizon: Option<f64>,
) -> Result<Transmission, TransmitError> {
    let mut sim = LinkSim::new(link, buffer)?;
    let mut last = f64::NEG_INFINITY;
    for (t, p) in packets {
        if t < last {
            return Err(TransmitError::Unordered(t));
        }
        last = t;
        sim.offer(t, p)?;
    }
    match horizon {
        Some(h) => sim.advance(h),
        None => {
            sim.drain();
        }
    }
    Ok(Transmission { deliveries: sim.take_arrived(), stats: sim.stats(), overflow_count: sim.buffer().overflow_count() })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransmitError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Framing(#[from] FramingError),
    #[error("packet timestamps must be nondecreasing (saw {0})")]
    Unordered(f64),
}

/// Receiver-side sequence accounting for one stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqTracker {
    next: Option<u32>,
    pub packets: u64,
    /// Missing sequence numbers.
    pub gaps: u64,
    /// Packets received with a sequence number at or behind the expected one.
    pub stale: u64,
}

impl SeqTracker {
    /// Records `seq`, returning the number of packets skipped before it.
    pub fn observe(&mut self, seq: u32) -> u64 {
        self.packets += 1;
        let skipped = match self.next {
            None => 0,
            Some(expected) => {
                let d = seq.wrapping_sub(expected);
                if d < u32::MAX / 2 {
                    d as u64
                } else {
                    self.stale += 1;
                    0
                }
            }
        };
        self.gaps += skipped;
        self.next = Some(seq.wrapping_add(1));
        skipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(seq: u32, width: usize, frames: usize) -> Packet {
        Packet { stream_id: 0, flags: 0, seq, timestamp_ticks: 0, frames: vec![vec![0; width]; frames] }
    }

    #[test]
    fn validation() {
        assert!(LinkModel { capacity_bps: 0.0, ..Default::default() }.validate().is_err());
        assert!(LinkModel::default().with_dropouts([(1.0, 3.0), (2.0, 4.0)]).validate().is_err());
        assert!(LinkModel::default().with_dropouts([(1.0, 1.0)]).validate().is_err());
        assert!(LinkModel::default().with_dropouts([(1.0, 2.0), (2.0, 4.0)]).validate().is_ok());
    }

    #[test]
    fn parse_link_spec() {
        let l: LinkModel = "192k,latency=5,drop=10-20".parse().unwrap();
        assert_eq!(l.capacity_bps, 192e3);
        assert_eq!(l.latency_ms, 5.0);
        assert_eq!(l.dropouts, vec![Dropout { start: 10.0, end: 20.0 }]);
        assert_eq!("ble".parse::<LinkModel>().unwrap().capacity_bps, 1.4e6);
        assert!("fast".parse::<LinkModel>().is_err());
        assert!("1M,drop=5-1".parse::<LinkModel>().is_err());
    }

    #[test]
    fn single_packet_timing() {
        // 23 + 3 bytes = 208 bits at 1000 bit/s
        let link = LinkModel { capacity_bps: 1000.0, dropouts: vec![], latency_ms: 50.0 };
        let out = transmit([(1.0, pkt(0, 1, 1))], link, DeviceBuffer::default(), None).unwrap();
        let d = &out.deliveries[0];
        assert_eq!(d.tx_start, 1.0);
        assert!((d.tx_end - 1.208).abs() < 1e-12);
        assert!((d.arrival - 1.258).abs() < 1e-12);
    }

    #[test]
    fn transmission_waits_out_dropout() {
        let link = LinkModel { capacity_bps: 1000.0, dropouts: vec![Dropout { start: 1.1, end: 2.0 }], latency_ms: 0.0 };
        let out = transmit([(1.0, pkt(0, 1, 1))], link, DeviceBuffer::default(), None).unwrap();
        assert_eq!(out.deliveries[0].tx_start, 2.0);
    }

    #[test]
    fn overflow_drops_oldest_and_flags_next() {
        let link = LinkModel { capacity_bps: 1e6, dropouts: vec![Dropout { start: 0.0, end: 10.0 }], latency_ms: 0.0 };
        // each packet is 208 bits, buffer holds three
        let packets = (0..5).map(|i| (i as f64, pkt(i, 1, 1)));
        let out = transmit(packets, link, DeviceBuffer::new(3 * 208), None).unwrap();
        assert_eq!(out.overflow_count, 2);
        let seqs: Vec<u32> = out.deliveries.iter().map(|d| d.packet.seq).collect();
        assert_eq!(seqs, vec![2, 3, 4]);
        assert!(out.deliveries[0].packet.has_flag(flags::OVERFLOW));
        assert!(!out.deliveries[1].packet.has_flag(flags::OVERFLOW));
        assert!(out.stats.conserved());
    }

    #[test]
    fn seq_tracker_counts_gaps_across_wrap() {
        let mut t = SeqTracker::default();
        for s in [u32::MAX - 1, u32::MAX, 2, 3] {
            t.observe(s);
        }
        assert_eq!(t.gaps, 2);
        assert_eq!(t.stale, 0);
        t.observe(1);
        assert_eq!(t.stale, 1);
    }
}
