//! Low-battery and disconnect alarms, one per condition episode.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmKind {
    BatteryLow,
    LinkLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum AlarmEvent {
    Raised { kind: AlarmKind, time_s: f64, detail: String },
    Cleared { kind: AlarmKind, time_s: f64 },
}

impl AlarmEvent {
    pub fn kind(&self) -> AlarmKind {
        match self {
            AlarmEvent::Raised { kind, .. } | AlarmEvent::Cleared { kind, .. } => *kind,
        }
    }

    pub fn is_raised(&self) -> bool {
        matches!(self, AlarmEvent::Raised { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmConfig {
    /// Battery fraction below which the alarm is raised.
    pub battery_low: f64,
    /// Fraction the battery must climb back above to end the episode.
    pub battery_clear: f64,
    /// Silence on the link, while traffic is expected, that counts as loss.
    pub link_timeout_s: f64,
}

impl Default for AlarmConfig {
    fn default() -> Self {
        Self { battery_low: biogap_core::runtime::BATTERY_LOW, battery_clear: 0.20, link_timeout_s: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct AlarmMonitor {
    cfg: AlarmConfig,
    battery_active: bool,
    link_active: bool,
    expect_traffic: bool,
    last_rx_s: Option<f64>,
}

impl AlarmMonitor {
    pub fn new(cfg: AlarmConfig) -> Self {
        Self { cfg, battery_active: false, link_active: false, expect_traffic: false, last_rx_s: None }
    }

    pub fn active(&self) -> Vec<AlarmKind> {
        [(self.battery_active, AlarmKind::BatteryLow), (self.link_active, AlarmKind::LinkLoss)]
            .into_iter()
            .filter_map(|(on, k)| on.then_some(k))
            .collect()
    }

    pub fn battery(&mut self, level: f64, time_s: f64) -> Option<AlarmEvent> {
        if !self.battery_active && level < self.cfg.battery_low {
            self.battery_active = true;
            return Some(AlarmEvent::Raised {
                kind: AlarmKind::BatteryLow,
                time_s,
                detail: format!("battery at {:.0}%", level * 100.0),
            });
        }
        if self.battery_active && level > self.cfg.battery_clear {
            self.battery_active = false;
            return Some(AlarmEvent::Cleared { kind: AlarmKind::BatteryLow, time_s });
        }
        None
    }

    /// Whether the device is in a mode that sends periodic packets. Silence
    /// is only a loss while it is.
    pub fn expect_traffic(&mut self, expected: bool, time_s: f64) {
        if expected && !self.expect_traffic {
            // start the silence clock afresh
            self.last_rx_s = Some(time_s);
        }
        self.expect_traffic = expected;
    }

    pub fn received(&mut self, time_s: f64) -> Option<AlarmEvent> {
        self.last_rx_s = Some(time_s);
        if self.link_active {
            self.link_active = false;
            return Some(AlarmEvent::Cleared { kind: AlarmKind::LinkLoss, time_s });
        }
        None
    }

    /// Checks for link silence at `time_s`.
    pub fn poll(&mut self, time_s: f64) -> Option<AlarmEvent> {
        let last = self.last_rx_s?;
        if self.expect_traffic && !self.link_active && time_s - last >= self.cfg.link_timeout_s {
            self.link_active = true;
            return Some(AlarmEvent::Raised {
                kind: AlarmKind::LinkLoss,
                time_s,
                detail: format!("no data for {:.1} s", time_s - last),
            });
        }
        None
    }
}

impl Default for AlarmMonitor {
    fn default() -> Self {
        Self::new(AlarmConfig::default())
    }
}
