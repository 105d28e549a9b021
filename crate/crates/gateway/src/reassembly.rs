//! Turns a packet sequence back into per-stream sample timelines.

use std::collections::BTreeMap;

use biogap_core::afe::{AfeConfig, ContactReport};
use biogap_core::proto::{flags, Packet, SeqTracker};
use biogap_core::runtime::{contact_from_frames, DeviceStatus, EdgeDecision, StreamId, IMU_RATE, PPG_RATE, TICK_RATE};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub packets: u64,
    pub frames: u64,
    /// Encoded packet bytes, overhead included.
    pub bytes: u64,
    /// Sequence numbers never received.
    pub gaps: u64,
    /// Packets at or behind the expected sequence number.
    pub stale: u64,
    pub overflow_flags: u64,
    pub saturated_packets: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExgFrame {
    pub tick: u64,
    pub afe: AfeConfig,
    pub codes: Vec<i32>,
}

/// ExG samples with one rate and channel layout, in µV.
#[derive(Debug, Clone, PartialEq)]
pub struct ExgBlock {
    pub sample_rate: u32,
    pub channels: Vec<usize>,
    pub ticks: Vec<u64>,
    /// One vector per channel.
    pub data: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Streams {
    pub exg: Vec<ExgFrame>,
    pub ppg: Vec<(u64, i32)>,
    pub imu: Vec<(u64, [i32; 3])>,
    pub decisions: Vec<(u64, EdgeDecision)>,
    pub contacts: Vec<(u64, ContactReport)>,
    pub statuses: Vec<(u64, DeviceStatus)>,
}

impl Streams {
    /// ExG frames sharing the layout of the first frame, converted to µV
    /// with the gain in force when each frame was taken.
    pub fn exg_block(&self) -> Option<ExgBlock> {
        let first = self.exg.first()?;
        let layout = |a: &AfeConfig| (a.sample_rate, a.channels_enabled);
        let channels: Vec<usize> = first.afe.enabled_channels().collect();
        let mut block = ExgBlock { sample_rate: first.afe.sample_rate, data: vec![Vec::new(); channels.len()], channels, ticks: Vec::new() };
        for f in self.exg.iter().filter(|f| layout(&f.afe) == layout(&first.afe)) {
            block.ticks.push(f.tick);
            for (col, &code) in block.data.iter_mut().zip(&f.codes) {
                col.push(f.afe.code_to_uv(code));
            }
        }
        Some(block)
    }

    /// Per-channel series on a dense sample grid; samples lost in transit
    /// hold the previous value. Returns the series and the filled count.
    pub fn exg_dense(&self) -> Option<(ExgBlock, usize)> {
        let block = self.exg_block()?;
        let period = TICK_RATE / block.sample_rate as u64;
        let t0 = block.ticks[0];
        let n = ((block.ticks.last().unwrap() - t0) / period + 1) as usize;
        let mut data = vec![Vec::with_capacity(n); block.channels.len()];
        let mut ticks = Vec::with_capacity(n);
        let mut filled = 0;
        for (i, &t) in block.ticks.iter().enumerate() {
            let index = ((t - t0) / period) as usize;
            while ticks.len() < index {
                ticks.push(t0 + ticks.len() as u64 * period);
                for col in data.iter_mut() {
                    col.push(col.last().copied().unwrap_or(0.0));
                }
                filled += 1;
            }
            if ticks.len() > index {
                continue;
            }
            ticks.push(t);
            for (col, src) in data.iter_mut().zip(&block.data) {
                col.push(src[i]);
            }
        }
        Some((ExgBlock { ticks, data, ..block }, filled))
    }

    pub fn ppg_values(&self) -> Vec<f64> {
        self.ppg.iter().map(|&(_, v)| v as f64).collect()
    }
}

/// Stateful decoder for one session's packet sequence.
#[derive(Debug, Clone)]
pub struct Reassembler {
    afe: AfeConfig,
    keep_frames: bool,
    trackers: BTreeMap<u8, SeqTracker>,
    stats: BTreeMap<u8, StreamStats>,
    streams: Streams,
    payload_errors: u64,
    battery_permille: Option<u16>,
}

impl Reassembler {
    /// `afe` is the configuration at the start of the recording; status
    /// packets update it.
    pub fn new(afe: AfeConfig) -> Self {
        Self {
            afe,
            keep_frames: true,
            trackers: BTreeMap::new(),
            stats: BTreeMap::new(),
            streams: Streams::default(),
            payload_errors: 0,
            battery_permille: None,
        }
    }

    /// Keeps counters only, for long live sessions.
    pub fn stats_only(mut self) -> Self {
        self.keep_frames = false;
        self
    }

    pub fn afe(&self) -> AfeConfig {
        self.afe
    }

    pub fn battery_permille(&self) -> Option<u16> {
        self.battery_permille
    }

    pub fn stats(&self) -> &BTreeMap<u8, StreamStats> {
        &self.stats
    }

    pub fn stream_stats(&self, id: StreamId) -> StreamStats {
        self.stats.get(&(id as u8)).copied().unwrap_or_default()
    }

    pub fn total_gaps(&self) -> u64 {
        self.stats.values().map(|s| s.gaps).sum()
    }

    pub fn payload_errors(&self) -> u64 {
        self.payload_errors
    }

    pub fn streams(&self) -> &Streams {
        &self.streams
    }

    pub fn into_streams(self) -> Streams {
        self.streams
    }

    /// Hands over the decoded frames accumulated so far.
    pub fn take_streams(&mut self) -> Streams {
        std::mem::take(&mut self.streams)
    }

    pub fn push(&mut self, p: &Packet) {
        let skipped = self.trackers.entry(p.stream_id).or_default().observe(p.seq);
        let tracker = self.trackers[&p.stream_id];
        let s = self.stats.entry(p.stream_id).or_default();
        s.packets += 1;
        s.frames += p.frame_count() as u64;
        s.bytes += p.encoded_len() as u64;
        s.gaps += skipped;
        s.stale = tracker.stale;
        s.overflow_flags += p.has_flag(flags::OVERFLOW) as u64;
        s.saturated_packets += p.has_flag(flags::SATURATION) as u64;

        let Some(stream) = StreamId::from_u8(p.stream_id) else { return };
        let t0 = p.timestamp_ticks;
        match stream {
            StreamId::Status => {
                for f in &p.frames {
                    match DeviceStatus::from_frame(f) {
                        Ok(st) => {
                            self.afe = st.afe;
                            self.battery_permille = Some(st.battery_permille);
                            if self.keep_frames {
                                self.streams.statuses.push((t0, st));
                            }
                        }
                        Err(_) => self.payload_errors += 1,
                    }
                }
            }
            _ if !self.keep_frames => {}
            StreamId::Exg => {
                let period = TICK_RATE / self.afe.sample_rate as u64;
                for (i, f) in p.frames.iter().enumerate() {
                    if f.len() != self.afe.n_enabled() {
                        self.payload_errors += 1;
                        continue;
                    }
                    self.streams.exg.push(ExgFrame { tick: t0 + i as u64 * period, afe: self.afe, codes: f.clone() });
                }
            }
            StreamId::Ppg => {
                let period = TICK_RATE / PPG_RATE as u64;
                self.streams.ppg.extend(p.frames.iter().enumerate().map(|(i, f)| (t0 + i as u64 * period, f[0])));
            }
            StreamId::Imu => {
                let period = TICK_RATE / IMU_RATE as u64;
                for (i, f) in p.frames.iter().enumerate() {
                    match f.as_slice() {
                        &[x, y, z] => self.streams.imu.push((t0 + i as u64 * period, [x, y, z])),
                        _ => self.payload_errors += 1,
                    }
                }
            }
            StreamId::EdgeAi => {
                for f in &p.frames {
                    match EdgeDecision::from_frame(f) {
                        Ok(d) => self.streams.decisions.push((t0, d)),
                        Err(_) => self.payload_errors += 1,
                    }
                }
            }
            StreamId::Contact => match contact_from_frames(&p.frames) {
                Ok(r) => self.streams.contacts.push((t0, r)),
                Err(_) => self.payload_errors += 1,
            },
        }
    }
}
