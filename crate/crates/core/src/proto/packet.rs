//! Wire format.
//!
//! ```text
//! offset  size  field
//! 0       2     magic 0xB1 0x0A
//! 2       1     version 0x01
//! 3       1     stream id
//! 4       1     flags (bit0 edge-AI, bit1 saturation, bit2 overflow)
//! 5       4     seq, big-endian, wrapping per stream
//! 9       8     timestamp of the first frame, sample-clock ticks, big-endian
//! 17      2     frame count, big-endian
//! 19      n     frames, each a run of 24-bit big-endian two's-complement codes
//! 19+n    4     CRC-32 (IEEE) over bytes 0..19+n, big-endian
//! ```
//!
//! The header carries no channel count: a frame's width follows from the
//! payload length, and a byte stream of back-to-back packets is split by
//! finding the width whose trailing CRC verifies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 2] = [0xB1, 0x0A];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 19;
pub const CRC_LEN: usize = 4;
pub const OVERHEAD: usize = HEADER_LEN + CRC_LEN;
pub const BYTES_PER_CODE: usize = 3;
/// Widest frame the stream splitter will consider.
pub const MAX_FRAME_WIDTH: usize = 64;

/// Flag bits.
pub mod flags {
    pub const EDGE_AI: u8 = 1 << 0;
    pub const SATURATION: u8 = 1 << 1;
    pub const OVERFLOW: u8 = 1 << 2;
}

const CODE_MAX: i32 = (1 << 23) - 1;
const CODE_MIN: i32 = -(1 << 23);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub stream_id: u8,
    pub flags: u8,
    pub seq: u32,
    pub timestamp_ticks: u64,
    /// Equal-width frames of 24-bit codes.
    pub frames: Vec<Vec<i32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FramingError {
    #[error("{0} frames exceed the 65535 frame limit")]
    TooManyFrames(usize),
    #[error("frames have unequal widths")]
    RaggedFrames,
    #[error("frames must carry at least one code")]
    EmptyFrame,
    #[error("code {0} does not fit in 24 bits")]
    CodeOutOfRange(i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("CRC mismatch")]
    BadCrc,
    #[error("truncated packet")]
    Truncated,
    #[error("payload length does not match the frame count")]
    BadLength,
}

impl Packet {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn has_flag(&self, flag: u8) -> bool {
        self.flags & flag != 0
    }

    pub fn encoded_len(&self) -> usize {
        OVERHEAD + self.frames.len() * self.width() * BYTES_PER_CODE
    }

    pub fn encode(&self) -> Result<Vec<u8>, FramingError> {
        if self.frames.len() > u16::MAX as usize {
            return Err(FramingError::TooManyFrames(self.frames.len()));
        }
        let width = self.width();
        if !self.frames.is_empty() && width == 0 {
            return Err(FramingError::EmptyFrame);
        }
        if self.frames.iter().any(|f| f.len() != width) {
            return Err(FramingError::RaggedFrames);
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.stream_id);
        out.push(self.flags);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.timestamp_ticks.to_be_bytes());
        out.extend_from_slice(&(self.frames.len() as u16).to_be_bytes());
        for &code in self.frames.iter().flatten() {
            if !(CODE_MIN..=CODE_MAX).contains(&code) {
                return Err(FramingError::CodeOutOfRange(code));
            }
            out.extend_from_slice(&code.to_be_bytes()[1..]);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        Ok(out)
    }

    /// Decodes exactly one packet occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Packet, DecodeError> {
        check_header(bytes)?;
        if bytes.len() < OVERHEAD {
            return Err(DecodeError::Truncated);
        }
        let body = bytes.len() - CRC_LEN;
        if crc32fast::hash(&bytes[..body]) != read_crc(&bytes[body..]) {
            return Err(DecodeError::BadCrc);
        }
        let frame_count = frame_count(bytes);
        let payload = body - HEADER_LEN;
        let width = match (frame_count, payload) {
            (0, 0) => 0,
            (0, _) => return Err(DecodeError::BadLength),
            (n, p) if p % (BYTES_PER_CODE * n) == 0 && p > 0 => p / (BYTES_PER_CODE * n),
            _ => return Err(DecodeError::BadLength),
        };
        let frames = bytes[HEADER_LEN..body]
            .chunks_exact(BYTES_PER_CODE * width.max(1))
            .take(frame_count)
            .map(|frame| frame.chunks_exact(BYTES_PER_CODE).map(read_code).collect())
            .collect();
        Ok(Packet {
            stream_id: bytes[3],
            flags: bytes[4],
            seq: u32::from_be_bytes(bytes[5..9].try_into().unwrap()),
            timestamp_ticks: u64::from_be_bytes(bytes[9..17].try_into().unwrap()),
            frames,
        })
    }
}

fn check_header(bytes: &[u8]) -> Result<(), DecodeError> {
    if bytes.len() < 3 {
        // a prefix that still matches the magic is a truncation
        return if MAGIC.starts_with(&bytes[..bytes.len().min(2)]) {
            Err(DecodeError::Truncated)
        } else {
            Err(DecodeError::BadMagic)
        };
    }
    if bytes[..2] != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    if bytes[2] != VERSION {
        return Err(DecodeError::BadVersion(bytes[2]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::Truncated);
    }
    Ok(())
}

fn frame_count(bytes: &[u8]) -> usize {
    u16::from_be_bytes([bytes[17], bytes[18]]) as usize
}

fn read_crc(b: &[u8]) -> u32 {
    u32::from_be_bytes(b[..4].try_into().unwrap())
}

fn read_code(b: &[u8]) -> i32 {
    // sign-extend from 24 bits
    (i32::from_be_bytes([b[0], b[1], b[2], 0])) >> 8
}

/// Length of the packet at the front of `buf`, found by trying each frame
/// width until the trailing CRC verifies.
pub fn split_packet(buf: &[u8]) -> Result<usize, DecodeError> {
    check_header(buf)?;
    let frames = frame_count(buf);
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&buf[..HEADER_LEN]);
    let verifies = |h: &crc32fast::Hasher, end: usize| {
        end + CRC_LEN <= buf.len() && h.clone().finalize() == read_crc(&buf[end..])
    };
    if frames == 0 {
        if buf.len() < OVERHEAD {
            return Err(DecodeError::Truncated);
        }
        return if verifies(&hasher, HEADER_LEN) { Ok(OVERHEAD) } else { Err(DecodeError::BadCrc) };
    }
    let step = frames * BYTES_PER_CODE;
    let mut end = HEADER_LEN;
    for _ in 1..=MAX_FRAME_WIDTH {
        if end + step + CRC_LEN > buf.len() {
            return Err(DecodeError::Truncated);
        }
        hasher.update(&buf[end..end + step]);
        end += step;
        if verifies(&hasher, end) {
            return Ok(end + CRC_LEN);
        }
    }
    Err(DecodeError::BadCrc)
}

/// An item read from a packet byte stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamItem {
    Packet { offset: usize, bytes: Vec<u8>, packet: Packet },
    /// Bytes skipped to reach the next verifiable packet.
    Corrupt { offset: usize, len: usize, error: DecodeError },
    /// Unterminated packet at the end of the stream.
    Truncated { offset: usize, len: usize },
}

/// Splits a concatenation of packets, resynchronizing after damage.
pub fn read_stream(buf: &[u8]) -> Vec<StreamItem> {
    let mut items = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        match split_packet(&buf[pos..]) {
            Ok(len) => {
                let bytes = buf[pos..pos + len].to_vec();
                match Packet::decode(&bytes) {
                    Ok(packet) => items.push(StreamItem::Packet { offset: pos, bytes, packet }),
                    Err(error) => items.push(StreamItem::Corrupt { offset: pos, len, error }),
                }
                pos += len;
            }
            Err(error) => match resync(buf, pos + 1) {
                Some(next) => {
                    // the damaged region is now bounded, so classify it on its own
                    let error = Packet::decode(&buf[pos..next]).err().unwrap_or(error);
                    items.push(StreamItem::Corrupt { offset: pos, len: next - pos, error });
                    pos = next;
                }
                None => {
                    let len = buf.len() - pos;
                    if error == DecodeError::Truncated {
                        items.push(StreamItem::Truncated { offset: pos, len });
                    } else {
                        items.push(StreamItem::Corrupt { offset: pos, len, error });
                    }
                    pos = buf.len();
                }
            },
        }
    }
    items
}

fn resync(buf: &[u8], from: usize) -> Option<usize> {
    (from..buf.len().saturating_sub(2))
        .filter(|&i| buf[i..i + 2] == MAGIC && buf[i + 2] == VERSION)
        .find(|&i| split_packet(&buf[i..]).is_ok())
}
