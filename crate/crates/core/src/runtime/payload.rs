//! Stream identifiers and the frame encodings of non-sample streams.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::afe::{AfeConfig, ChannelContact, ContactProbe, ContactReport, ContactVerdict, Supply, CODE_MAX};

use super::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum StreamId {
    Exg = 0,
    Ppg = 1,
    Imu = 2,
    EdgeAi = 3,
    Contact = 4,
    Status = 5,
}

impl StreamId {
    pub const ALL: [StreamId; 6] =
        [StreamId::Exg, StreamId::Ppg, StreamId::Imu, StreamId::EdgeAi, StreamId::Contact, StreamId::Status];

    pub fn from_u8(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamId::Exg => "exg",
            StreamId::Ppg => "ppg",
            StreamId::Imu => "imu",
            StreamId::EdgeAi => "edge_ai",
            StreamId::Contact => "contact",
            StreamId::Status => "status",
        }
    }
}

/// PPG codes per arbitrary unit.
pub const PPG_CODES_PER_AU: f64 = 1.0;
/// IMU codes per g (1 code = 1 mg).
pub const IMU_CODES_PER_G: f64 = 1000.0;
/// Edge-AI scores are sent as thousandths.
pub const SCORE_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("{stream} frame has {got} values, expected {expected}")]
    Width { stream: &'static str, expected: usize, got: usize },
    #[error("{stream} frame field {field} has invalid value {value}")]
    Value { stream: &'static str, field: &'static str, value: i32 },
}

/// Device state snapshot carried by status packets. Frame layout:
/// `[mode, sample_rate, gain, channel_mask, supply, noise_enabled, battery_permille]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceStatus {
    pub mode: Mode,
    pub afe: AfeConfig,
    pub battery_permille: u16,
}

impl DeviceStatus {
    pub const WIDTH: usize = 7;

    pub fn to_frame(&self) -> Vec<i32> {
        vec![
            self.mode.code() as i32,
            self.afe.sample_rate as i32,
            self.afe.gain as i32,
            self.afe.channels_enabled as i32,
            matches!(self.afe.supply, Supply::Bipolar) as i32,
            self.afe.noise_enabled as i32,
            self.battery_permille as i32,
        ]
    }

    pub fn from_frame(f: &[i32]) -> Result<Self, PayloadError> {
        const S: &str = "status";
        if f.len() != Self::WIDTH {
            return Err(PayloadError::Width { stream: S, expected: Self::WIDTH, got: f.len() });
        }
        let bad = |field, value| PayloadError::Value { stream: S, field, value };
        let mode = Mode::from_code(f[0]).ok_or(bad("mode", f[0]))?;
        let afe = AfeConfig {
            sample_rate: u32::try_from(f[1]).map_err(|_| bad("sample_rate", f[1]))?,
            gain: u8::try_from(f[2]).map_err(|_| bad("gain", f[2]))?,
            channels_enabled: u16::try_from(f[3]).map_err(|_| bad("channel_mask", f[3]))?,
            supply: if f[4] == 0 { Supply::Unipolar } else { Supply::Bipolar },
            noise_enabled: f[5] != 0,
        };
        let battery_permille = u16::try_from(f[6]).map_err(|_| bad("battery", f[6]))?;
        Ok(Self { mode, afe, battery_permille })
    }
}

/// On-device classification output. Frame layout:
/// `[decision in centi-Hz or -1, score_1 × 1000, …]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDecision {
    pub decision_hz: Option<f64>,
    pub scores: Vec<f64>,
}

impl EdgeDecision {
    pub fn to_frame(&self) -> Vec<i32> {
        let mut f = Vec::with_capacity(1 + self.scores.len());
        f.push(self.decision_hz.map_or(-1, |hz| (hz * 100.0).round() as i32));
        f.extend(self.scores.iter().map(|s| (s * SCORE_SCALE).round().clamp(0.0, CODE_MAX as f64) as i32));
        f
    }

    pub fn from_frame(f: &[i32]) -> Result<Self, PayloadError> {
        let (&d, scores) = f.split_first().ok_or(PayloadError::Width { stream: "edge_ai", expected: 1, got: 0 })?;
        Ok(Self {
            decision_hz: (d >= 0).then(|| d as f64 / 100.0),
            scores: scores.iter().map(|&s| s as f64 / SCORE_SCALE).collect(),
        })
    }
}

/// One frame per channel: `[channel, attenuation in centi-dB, verdict]`,
/// verdict 0 good, 1 marginal, 2 open. The probe is fixed by convention and
/// not transmitted.
pub fn contact_frames(report: &ContactReport) -> Vec<Vec<i32>> {
    report
        .channels
        .iter()
        .map(|c| {
            let verdict = match c.verdict {
                ContactVerdict::Good => 0,
                ContactVerdict::Marginal => 1,
                ContactVerdict::Open => 2,
            };
            vec![c.channel as i32, (c.attenuation_db * 100.0).round() as i32, verdict]
        })
        .collect()
}

pub fn contact_from_frames(frames: &[Vec<i32>]) -> Result<ContactReport, PayloadError> {
    const S: &str = "contact";
    let channels = frames
        .iter()
        .map(|f| {
            if f.len() != 3 {
                return Err(PayloadError::Width { stream: S, expected: 3, got: f.len() });
            }
            let verdict = match f[2] {
                0 => ContactVerdict::Good,
                1 => ContactVerdict::Marginal,
                2 => ContactVerdict::Open,
                v => return Err(PayloadError::Value { stream: S, field: "verdict", value: v }),
            };
            let channel = usize::try_from(f[0]).map_err(|_| PayloadError::Value { stream: S, field: "channel", value: f[0] })?;
            Ok(ChannelContact { channel, attenuation_db: f[1] as f64 / 100.0, verdict })
        })
        .collect::<Result<_, _>>()?;
    Ok(ContactReport { probe: ContactProbe::default(), channels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_round_trip() {
        let s = DeviceStatus { mode: Mode::Streaming, afe: AfeConfig { gain: 6, channels_enabled: 0x8001, ..Default::default() }, battery_permille: 873 };
        assert_eq!(DeviceStatus::from_frame(&s.to_frame()).unwrap(), s);
        assert!(DeviceStatus::from_frame(&[0; 3]).is_err());
    }

    #[test]
    fn edge_round_trip() {
        let d = EdgeDecision { decision_hz: Some(11.5), scores: vec![0.98, 2.345, 1.0, 0.9] };
        let back = EdgeDecision::from_frame(&d.to_frame()).unwrap();
        assert_eq!(back, d);
        let none = EdgeDecision { decision_hz: None, scores: vec![1.0] };
        assert_eq!(EdgeDecision::from_frame(&none.to_frame()).unwrap(), none);
    }

    #[test]
    fn contact_round_trip() {
        let r = ContactReport {
            probe: ContactProbe::default(),
            channels: vec![
                ChannelContact { channel: 0, attenuation_db: 0.12, verdict: ContactVerdict::Good },
                ChannelContact { channel: 5, attenuation_db: 120.0, verdict: ContactVerdict::Open },
            ],
        };
        assert_eq!(contact_from_frames(&contact_frames(&r)).unwrap(), r);
    }

    #[test]
    fn stream_ids() {
        for s in StreamId::ALL {
            assert_eq!(StreamId::from_u8(s as u8), Some(s));
        }
        assert_eq!(StreamId::from_u8(9), None);
    }
}
