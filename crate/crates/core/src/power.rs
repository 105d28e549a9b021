//! Per-domain power budget and battery-life projection for the three
//! form-factor presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Nrf,
    AdsDigital,
    AdsAnalog,
    Ppg,
    ActiveElectrodes,
    Imu,
    Gap9,
}

impl DomainKind {
    pub const ALL: [DomainKind; 7] = [
        DomainKind::Nrf,
        DomainKind::AdsDigital,
        DomainKind::AdsAnalog,
        DomainKind::Ppg,
        DomainKind::ActiveElectrodes,
        DomainKind::Imu,
        DomainKind::Gap9,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DomainKind::Nrf => "nRF",
            DomainKind::AdsDigital => "ADS digital",
            DomainKind::AdsAnalog => "ADS analog",
            DomainKind::Ppg => "PPG",
            DomainKind::ActiveElectrodes => "Active electrodes",
            DomainKind::Imu => "IMU",
            DomainKind::Gap9 => "GAP9",
        }
    }
}

impl FromStr for DomainKind {
    type Err = PowerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "nrf" => DomainKind::Nrf,
            "ads_digital" => DomainKind::AdsDigital,
            "ads_analog" => DomainKind::AdsAnalog,
            "ppg" => DomainKind::Ppg,
            "active_electrodes" => DomainKind::ActiveElectrodes,
            "imu" => DomainKind::Imu,
            "gap9" => DomainKind::Gap9,
            other => return Err(PowerError::UnknownDomain(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Headband,
    Sleeve,
    Chestband,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Headband, Preset::Sleeve, Preset::Chestband];

    /// Measured draw per domain while streaming, mW. `None` marks a domain
    /// that is not populated on this form factor.
    pub fn draw_mw(self, domain: DomainKind) -> Option<f64> {
        use DomainKind::*;
        match (self, domain) {
            (Preset::Headband, Nrf) => Some(8.1),
            (Preset::Headband, AdsDigital) => Some(1.9),
            (Preset::Headband, AdsAnalog) => Some(16.8),
            (Preset::Headband, Ppg) => Some(3.1),
            (Preset::Headband, ActiveElectrodes) => Some(2.8),
            (Preset::Sleeve, Nrf) => Some(8.0),
            (Preset::Sleeve, AdsDigital) => Some(1.9),
            (Preset::Sleeve, AdsAnalog) => Some(16.8),
            (Preset::Chestband, Nrf) => Some(2.5),
            (Preset::Chestband, AdsDigital) => Some(0.7),
            (Preset::Chestband, AdsAnalog) => Some(2.9),
            (Preset::Chestband, Ppg) => Some(3.1),
            (_, Imu) => Some(0.06),
            // application dependent; attached through a workload
            (_, Gap9) => Some(0.0),
            _ => None,
        }
    }

    /// Domain list with every populated domain active, GAP9 inactive.
    pub fn domains(self) -> Vec<PowerDomain> {
        DomainKind::ALL
            .iter()
            .filter_map(|&kind| {
                self.draw_mw(kind).map(|draw_mw| PowerDomain { kind, draw_mw, active: kind != DomainKind::Gap9 })
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Headband => "headband",
            Preset::Sleeve => "sleeve",
            Preset::Chestband => "chestband",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = PowerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "headband" => Ok(Preset::Headband),
            "sleeve" | "armband" => Ok(Preset::Sleeve),
            "chestband" => Ok(Preset::Chestband),
            other => Err(PowerError::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerDomain {
    pub kind: DomainKind,
    pub draw_mw: f64,
    pub active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub capacity_mah: f64,
    pub voltage: f64,
}

impl Battery {
    /// Stored energy, mWh.
    pub fn energy_mwh(&self) -> f64 {
        self.capacity_mah * self.voltage
    }
}

impl Default for Battery {
    fn default() -> Self {
        Self { capacity_mah: 150.0, voltage: 3.7 }
    }
}

impl FromStr for Battery {
    type Err = PowerError;

    /// Parses `150mAh@3.7V`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PowerError::Invalid(format!("battery '{s}' is not of the form <mAh>mAh@<V>V"));
        let (cap, volt) = s.split_once('@').ok_or_else(bad)?;
        let cap = cap.trim().trim_end_matches("mAh").trim_end_matches("mah");
        let volt = volt.trim().trim_end_matches(['V', 'v']);
        Ok(Battery {
            capacity_mah: cap.trim().parse().map_err(|_| bad())?,
            voltage: volt.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("unknown power domain '{0}'")]
    UnknownDomain(String),
    #[error("invalid power input: {0}")]
    Invalid(String),
}

/// Resolution at which totals are reported, mW.
pub const REPORT_RESOLUTION_MW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub domains: Vec<PowerDomain>,
    /// Sum of active draws, mW.
    pub total_mw: f64,
    pub battery: Battery,
    /// Hours to empty at the reported total; `None` when nothing draws.
    pub battery_life_h: Option<f64>,
}

impl PowerReport {
    pub fn from_domains(domains: Vec<PowerDomain>, battery: Battery) -> Result<Self, PowerError> {
        if let Some(d) = domains.iter().find(|d| !(d.draw_mw >= 0.0 && d.draw_mw.is_finite())) {
            return Err(PowerError::Invalid(format!("{} draw {} mW must be >= 0", d.kind.label(), d.draw_mw)));
        }
        if !(battery.capacity_mah > 0.0 && battery.voltage > 0.0) {
            return Err(PowerError::Invalid("battery capacity and voltage must be > 0".into()));
        }
        let mut report = PowerReport { domains, total_mw: 0.0, battery, battery_life_h: None };
        report.recompute();
        Ok(report)
    }

    fn recompute(&mut self) {
        self.total_mw = self.domains.iter().filter(|d| d.active).map(|d| d.draw_mw).sum();
        let reported = self.reported_total_mw();
        self.battery_life_h = (reported > 0.0).then(|| self.battery.energy_mwh() / reported);
    }

    /// Total rounded to the reporting resolution.
    pub fn reported_total_mw(&self) -> f64 {
        (self.total_mw / REPORT_RESOLUTION_MW).round() * REPORT_RESOLUTION_MW
    }

    pub fn domain(&self, kind: DomainKind) -> Option<&PowerDomain> {
        self.domains.iter().find(|d| d.kind == kind)
    }

    pub fn set_active(&mut self, kind: DomainKind, active: bool) -> Result<(), PowerError> {
        let d = self
            .domains
            .iter_mut()
            .find(|d| d.kind == kind)
            .ok_or_else(|| PowerError::UnknownDomain(kind.label().to_string()))?;
        d.active = active;
        self.recompute();
        Ok(())
    }

    /// Adds the mean power of a workload to the GAP9 domain and activates it.
    pub fn attach_workload(mut self, workload: Workload, energy: EnergyModel) -> Result<Self, PowerError> {
        if !(energy.mj_per_unit >= 0.0 && energy.units_per_s >= 0.0) {
            return Err(PowerError::Invalid(format!(
                "{workload:?}: energy {} mJ at {} units/s must be >= 0",
                energy.mj_per_unit, energy.units_per_s
            )));
        }
        let added = energy.mean_mw();
        if added == 0.0 {
            return Ok(self);
        }
        match self.domains.iter_mut().find(|d| d.kind == DomainKind::Gap9) {
            Some(d) => {
                d.draw_mw = if d.active { d.draw_mw + added } else { added };
                d.active = true;
            }
            None => self.domains.push(PowerDomain { kind: DomainKind::Gap9, draw_mw: added, active: true }),
        }
        self.recompute();
        Ok(self)
    }

    /// Plain-text table, one row per domain.
    pub fn to_table(&self) -> String {
        let mut out = String::from("Power domain         Draw [mW]\n");
        for d in &self.domains {
            let draw = if d.active { format!("{:.2}", d.draw_mw) } else { "n/a".to_string() };
            out.push_str(&format!("{:<20} {:>9}\n", d.kind.label(), draw));
        }
        out.push_str(&format!("{:<20} {:>9.1}\n", "Total power", self.reported_total_mw()));
        let life = self.battery_life_h.map_or("unbounded".to_string(), |h| format!("{h:.1}"));
        out.push_str(&format!("{:<20} {:>9}\n", "Battery life [h]", life));
        out
    }
}

/// Preset report with every populated domain active.
pub fn power_report(preset: Preset, battery: Battery) -> Result<PowerReport, PowerError> {
    PowerReport::from_domains(preset.domains(), battery)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    FftBenchmark,
    SsvepOnline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub mj_per_unit: f64,
    pub units_per_s: f64,
}

impl EnergyModel {
    /// mJ/unit × units/s = mW.
    pub fn mean_mw(&self) -> f64 {
        self.mj_per_unit * self.units_per_s
    }
}

/// Energy per edge inference on the NN accelerator, mJ.
pub const INFERENCE_ENERGY_MJ: f64 = 0.36;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headband_total() {
        let r = power_report(Preset::Headband, Battery::default()).unwrap();
        assert!((r.total_mw - 32.76).abs() < 1e-9);
        assert!((r.reported_total_mw() - 32.8).abs() < 1e-9);
        assert!(!r.domain(DomainKind::Gap9).unwrap().active);
    }

    #[test]
    fn chestband_battery_life() {
        let r = power_report(Preset::Chestband, Battery { capacity_mah: 150.0, voltage: 3.7 }).unwrap();
        assert!((r.battery_life_h.unwrap() - 555.0 / 9.3).abs() < 1e-9);
        assert!((r.battery_life_h.unwrap() - 59.7).abs() < 0.1);
    }

    #[test]
    fn all_inactive_is_unbounded() {
        let mut domains = Preset::Sleeve.domains();
        domains.iter_mut().for_each(|d| d.active = false);
        let r = PowerReport::from_domains(domains, Battery::default()).unwrap();
        assert_eq!(r.total_mw, 0.0);
        assert_eq!(r.battery_life_h, None);
    }

    #[test]
    fn workloads() {
        let base = power_report(Preset::Headband, Battery::default()).unwrap();
        let one_hz = base
            .clone()
            .attach_workload(Workload::SsvepOnline, EnergyModel { mj_per_unit: 0.36, units_per_s: 1.0 })
            .unwrap();
        assert!((one_hz.domain(DomainKind::Gap9).unwrap().draw_mw - 0.36).abs() < 1e-12);
        assert!((one_hz.total_mw - base.total_mw - 0.36).abs() < 1e-9);
        let twenty = base
            .clone()
            .attach_workload(Workload::FftBenchmark, EnergyModel { mj_per_unit: 0.36, units_per_s: 20.0 })
            .unwrap();
        assert!((twenty.total_mw - base.total_mw - 7.2).abs() < 1e-9);
        let none = base
            .clone()
            .attach_workload(Workload::FftBenchmark, EnergyModel { mj_per_unit: 0.36, units_per_s: 0.0 })
            .unwrap();
        assert_eq!(none, base);
        assert!(base
            .attach_workload(Workload::FftBenchmark, EnergyModel { mj_per_unit: -1.0, units_per_s: 1.0 })
            .is_err());
    }

    #[test]
    fn parsing() {
        assert_eq!("150mAh@3.7V".parse::<Battery>().unwrap(), Battery { capacity_mah: 150.0, voltage: 3.7 });
        assert!("150@".parse::<Battery>().is_err());
        assert_eq!("Chestband".parse::<Preset>().unwrap(), Preset::Chestband);
        assert!(matches!("earbud".parse::<Preset>(), Err(PowerError::UnknownPreset(_))));
        assert_eq!("ads-analog".parse::<DomainKind>().unwrap(), DomainKind::AdsAnalog);
    }

    #[test]
    fn negative_draw_rejected() {
        let d = vec![PowerDomain { kind: DomainKind::Nrf, draw_mw: -1.0, active: true }];
        assert!(PowerReport::from_domains(d, Battery::default()).is_err());
    }

    #[test]
    fn table_lists_every_domain() {
        let t = power_report(Preset::Chestband, Battery::default()).unwrap().to_table();
        assert!(t.contains("Total power"));
        assert!(t.contains("9.3"));
        assert!(t.contains("59.7"));
    }
}
