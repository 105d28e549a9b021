//! Recording file: a small JSON header followed by the delivered packets
//! exactly as they crossed the link.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "BIOGAPRC"
//! 8       2     format version, big-endian
//! 10      4     header length n, big-endian
//! 14      n     header, UTF-8 JSON (RecordingHeader)
//! 14+n    ...   packets, back to back
//! ```

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use biogap_core::afe::AfeConfig;
use biogap_core::power::Preset;
use biogap_core::proto::{read_stream, Packet, StreamItem};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FILE_MAGIC: [u8; 8] = *b"BIOGAPRC";
pub const FILE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub preset: Preset,
    /// Converter configuration when the recording started.
    pub afe: AfeConfig,
    /// Ticks per second of the packet timestamps.
    pub tick_rate: u64,
    /// Session start, ms since the Unix epoch; 0 for simulated sessions.
    pub start_wall_ms: u64,
    /// Tick of the session start.
    pub start_tick: u64,
    pub session_id: String,
}

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("not a recording (bad magic)")]
    BadMagic,
    #[error("unsupported recording version {0}")]
    BadVersion(u16),
    #[error("recording header is truncated")]
    TruncatedHeader,
    #[error("recording header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RecordingHeader {
    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(self).expect("header serializes");
        let mut out = Vec::with_capacity(14 + json.len());
        out.extend_from_slice(&FILE_MAGIC);
        out.extend_from_slice(&FILE_VERSION.to_be_bytes());
        out.extend_from_slice(&(json.len() as u32).to_be_bytes());
        out.extend_from_slice(&json);
        out
    }

    /// Parses the header, returning it with the offset of the first packet.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize), RecordingError> {
        if bytes.len() < 14 {
            return Err(if bytes.starts_with(&FILE_MAGIC[..bytes.len().min(8)]) {
                RecordingError::TruncatedHeader
            } else {
                RecordingError::BadMagic
            });
        }
        if bytes[..8] != FILE_MAGIC {
            return Err(RecordingError::BadMagic);
        }
        let version = u16::from_be_bytes([bytes[8], bytes[9]]);
        if version != FILE_VERSION {
            return Err(RecordingError::BadVersion(version));
        }
        let len = u32::from_be_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let end = 14 + len;
        if bytes.len() < end {
            return Err(RecordingError::TruncatedHeader);
        }
        Ok((serde_json::from_slice(&bytes[14..end])?, end))
    }
}

/// Append-only writer.
pub struct RecordingWriter<W: Write> {
    out: W,
    bytes_written: u64,
    packets: u64,
}

impl RecordingWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: &RecordingHeader) -> Result<Self, RecordingError> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> RecordingWriter<W> {
    pub fn new(mut out: W, header: &RecordingHeader) -> Result<Self, RecordingError> {
        let h = header.to_bytes();
        out.write_all(&h)?;
        Ok(Self { out, bytes_written: h.len() as u64, packets: 0 })
    }

    pub fn append(&mut self, packet_bytes: &[u8]) -> io::Result<()> {
        self.out.write_all(packet_bytes)?;
        self.bytes_written += packet_bytes.len() as u64;
        self.packets += 1;
        Ok(())
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn packets(&self) -> u64 {
        self.packets
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// A parsed recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub header: RecordingHeader,
    pub items: Vec<StreamItem>,
}

impl Recording {
    pub fn parse(bytes: &[u8]) -> Result<Self, RecordingError> {
        let (header, offset) = RecordingHeader::parse(bytes)?;
        let items = read_stream(&bytes[offset..])
            .into_iter()
            .map(|item| match item {
                StreamItem::Packet { offset: o, bytes, packet } => StreamItem::Packet { offset: o + offset, bytes, packet },
                StreamItem::Corrupt { offset: o, len, error } => StreamItem::Corrupt { offset: o + offset, len, error },
                StreamItem::Truncated { offset: o, len } => StreamItem::Truncated { offset: o + offset, len },
            })
            .collect();
        Ok(Self { header, items })
    }

    pub fn open(path: &Path) -> Result<Self, RecordingError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::parse(&bytes)
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.items.iter().filter_map(|i| match i {
            StreamItem::Packet { packet, .. } => Some(packet),
            _ => None,
        })
    }

    pub fn corrupt_count(&self) -> usize {
        self.items.iter().filter(|i| matches!(i, StreamItem::Corrupt { .. })).count()
    }

    /// The file ends inside a packet, as after an aborted session.
    pub fn is_partial(&self) -> bool {
        matches!(self.items.last(), Some(StreamItem::Truncated { .. }))
    }

    /// Serializes back to the file layout. Damaged regions are kept only
    /// when `original` is supplied.
    pub fn to_bytes(&self, original: Option<&[u8]>) -> Vec<u8> {
        let mut out = self.header.to_bytes();
        for item in &self.items {
            match (item, original) {
                (StreamItem::Packet { bytes, .. }, _) => out.extend_from_slice(bytes),
                (StreamItem::Corrupt { offset, len, .. } | StreamItem::Truncated { offset, len }, Some(orig)) => {
                    out.extend_from_slice(&orig[*offset..offset + len])
                }
                _ => {}
            }
        }
        out
    }
}
