//! Recording export: CSV in physical units, or a clean packet copy.

use std::io::Write;

use biogap_core::afe::NUM_CHANNELS;
use biogap_core::runtime::{IMU_CODES_PER_G, PPG_CODES_PER_AU, TICK_RATE};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reassembly::Reassembler;
use crate::recording::Recording;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvStream {
    Exg,
    Ppg,
    Imu,
}

impl std::str::FromStr for CsvStream {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exg" => Ok(CsvStream::Exg),
            "ppg" => Ok(CsvStream::Ppg),
            "imu" => Ok(CsvStream::Imu),
            _ => Err(format!("unknown stream `{s}` (exg, ppg, imu)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What an export wrote and what it had to leave out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub rows: usize,
    pub columns: Vec<String>,
    /// Damaged packets whose rows are missing.
    pub corrupt_packets: usize,
    /// The recording ends inside a packet.
    pub truncated: bool,
    /// Packets that verified but carried malformed frames.
    pub payload_errors: u64,
}

impl ExportSummary {
    pub fn warnings(&self) -> usize {
        self.corrupt_packets + self.truncated as usize + self.payload_errors as usize
    }
}

fn decode(rec: &Recording) -> Reassembler {
    let mut r = Reassembler::new(rec.header.afe);
    for p in rec.packets() {
        r.push(p);
    }
    r
}

fn time_s(tick: u64) -> f64 {
    tick as f64 / TICK_RATE as f64
}

/// Writes one row per received sample tick. ExG columns are the union of
/// the channel masks seen in the recording, in channel order, in µV;
/// a channel disabled at that tick has an empty cell.
pub fn export_csv<W: Write>(rec: &Recording, stream: CsvStream, out: W) -> Result<ExportSummary, ExportError> {
    let r = decode(rec);
    let streams = r.streams();
    let mut w = csv::Writer::from_writer(out);
    let mut summary = ExportSummary {
        corrupt_packets: rec.corrupt_count(),
        truncated: rec.is_partial(),
        payload_errors: r.payload_errors(),
        ..Default::default()
    };
    let head = |names: &[String]| -> Vec<String> { ["tick".to_string(), "time_s".to_string()].into_iter().chain(names.iter().cloned()).collect() };
    match stream {
        CsvStream::Exg => {
            let union = streams.exg.iter().fold(0u16, |m, f| m | f.afe.channels_enabled);
            let cols: Vec<usize> = (0..NUM_CHANNELS).filter(|c| union >> c & 1 == 1).collect();
            summary.columns = head(&cols.iter().map(|c| format!("ch{c}_uv")).collect::<Vec<_>>());
            w.write_record(&summary.columns)?;
            for f in &streams.exg {
                let mut row = vec![f.tick.to_string(), time_s(f.tick).to_string()];
                let mut codes = f.codes.iter();
                for c in &cols {
                    row.push(if f.afe.channels_enabled >> c & 1 == 1 {
                        codes.next().map_or(String::new(), |&code| f.afe.code_to_uv(code).to_string())
                    } else {
                        String::new()
                    });
                }
                w.write_record(&row)?;
            }
            summary.rows = streams.exg.len();
        }
        CsvStream::Ppg => {
            summary.columns = head(&["ppg_au".to_string()]);
            w.write_record(&summary.columns)?;
            for &(t, v) in &streams.ppg {
                w.write_record([t.to_string(), time_s(t).to_string(), (v as f64 / PPG_CODES_PER_AU).to_string()])?;
            }
            summary.rows = streams.ppg.len();
        }
        CsvStream::Imu => {
            summary.columns = head(&["x_g", "y_g", "z_g"].map(String::from));
            w.write_record(&summary.columns)?;
            for &(t, a) in &streams.imu {
                let mut row = vec![t.to_string(), time_s(t).to_string()];
                row.extend(a.iter().map(|&v| (v as f64 / IMU_CODES_PER_G).to_string()));
                w.write_record(&row)?;
            }
            summary.rows = streams.imu.len();
        }
    }
    w.flush()?;
    Ok(summary)
}

/// Writes the header and every intact packet verbatim. For an undamaged
/// recording the output equals the input byte for byte.
pub fn export_packets<W: Write>(rec: &Recording, mut out: W) -> Result<ExportSummary, ExportError> {
    out.write_all(&rec.to_bytes(None))?;
    out.flush()?;
    Ok(ExportSummary {
        rows: rec.packets().count(),
        columns: Vec::new(),
        corrupt_packets: rec.corrupt_count(),
        truncated: rec.is_partial(),
        payload_errors: 0,
    })
}
