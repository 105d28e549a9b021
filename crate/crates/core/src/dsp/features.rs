//! Feature extractors: binned RMS, R-peak detection and pulse transit time.

use serde::{Deserialize, Serialize};

use super::DspError;

/// RMS over consecutive non-overlapping bins of `bin_ms`. A trailing
/// partial bin is discarded.
pub fn rms_bins(x: &[f64], bin_ms: f64, sample_rate: f64) -> Result<Vec<f64>, DspError> {
    let bin = (bin_ms * 1e-3 * sample_rate).round();
    if !(bin >= 1.0) {
        return Err(DspError::TooShort { needed: 1, got: bin.max(0.0) as usize });
    }
    let bin = bin as usize;
    Ok(x
        .chunks_exact(bin)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / bin as f64).sqrt())
        .collect())
}

/// Tunables of the R-peak detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RPeakConfig {
    /// Minimum spacing between accepted beats, seconds.
    pub refractory_s: f64,
    /// Width of the energy integration window, seconds.
    pub integration_s: f64,
    /// Half-width of the window searched for the raw maximum around an
    /// energy peak, seconds.
    pub search_s: f64,
}

impl Default for RPeakConfig {
    fn default() -> Self {
        Self { refractory_s: 0.2, integration_s: 0.15, search_s: 0.075 }
    }
}

/// R-peak sample indices in a bandpassed ECG.
pub fn detect_r_peaks(ecg: &[f64], sample_rate: f64) -> Vec<usize> {
    detect_r_peaks_with(ecg, sample_rate, RPeakConfig::default())
}

/// Derivative, squaring and moving-window integration followed by a
/// two-level adaptive threshold (signal and noise peak estimates), then
/// refinement of each detection to the raw ECG maximum.
pub fn detect_r_peaks_with(ecg: &[f64], sample_rate: f64, cfg: RPeakConfig) -> Vec<usize> {
    let n = ecg.len();
    if n < 5 {
        return Vec::new();
    }
    let mut energy = vec![0.0; n];
    for i in 2..n - 2 {
        let d = (-ecg[i - 2] - 2.0 * ecg[i - 1] + 2.0 * ecg[i + 1] + ecg[i + 2]) / 8.0;
        energy[i] = d * d;
    }
    let half = ((cfg.integration_s * sample_rate) / 2.0).round().max(1.0) as usize;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + energy[i];
    }
    let mwi: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();

    let learn = ((2.0 * sample_rate) as usize).clamp(1, n);
    let learn_max = mwi[..learn].iter().cloned().fold(0.0, f64::max);
    let learn_mean = mwi[..learn].iter().sum::<f64>() / learn as f64;
    let mut spki = learn_max / 3.0;
    let mut npki = learn_mean / 2.0;
    let refractory = (cfg.refractory_s * sample_rate).round() as usize;

    let mut accepted: Vec<(usize, f64)> = Vec::new();
    for i in 1..n - 1 {
        let v = mwi[i];
        if !(v >= mwi[i - 1] && v > mwi[i + 1]) {
            continue;
        }
        let threshold = npki + 0.25 * (spki - npki);
        if v > threshold && v > 0.0 {
            match accepted.last_mut() {
                Some(last) if i - last.0 < refractory => {
                    if v > last.1 {
                        *last = (i, v);
                    }
                }
                _ => accepted.push((i, v)),
            }
            spki = 0.125 * v + 0.875 * spki;
        } else {
            npki = 0.125 * v + 0.875 * npki;
        }
    }

    let search = (cfg.search_s * sample_rate).round() as usize;
    let mut peaks: Vec<usize> = Vec::with_capacity(accepted.len());
    for (i, _) in accepted {
        let lo = i.saturating_sub(search);
        let hi = (i + search + 1).min(n);
        let mut best = lo;
        for j in lo..hi {
            if ecg[j] > ecg[best] {
                best = j;
            }
        }
        match peaks.last() {
            Some(&prev) if best - prev < refractory || best <= prev => {
                if ecg[best] > ecg[prev] {
                    *peaks.last_mut().unwrap() = best;
                }
            }
            _ => peaks.push(best),
        }
    }
    peaks
}

/// Pulse transit time estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PttResult {
    /// One value per beat with a detected rise, seconds.
    pub per_beat: Vec<f64>,
    pub median: Option<f64>,
    /// Beats whose search window held no rising edge.
    pub skipped: usize,
}

/// Search window after each R-peak for the PPG steepest rise.
pub const PTT_SEARCH_S: f64 = 0.5;

/// PTT with ECG and PPG sampled at the same rate.
pub fn ptt(ecg_peaks: &[usize], ppg: &[f64], sample_rate: f64) -> PttResult {
    ptt_multirate(ecg_peaks, sample_rate, ppg, sample_rate)
}

/// For each R-peak, the delay to the maximum (central) first difference of
/// the PPG within `(peak, peak + 0.5 s]`. Peaks are given in ECG samples,
/// the PPG may run at a different rate on the same clock.
pub fn ptt_multirate(ecg_peaks: &[usize], ecg_rate: f64, ppg: &[f64], ppg_rate: f64) -> PttResult {
    let mut per_beat = Vec::with_capacity(ecg_peaks.len());
    let mut skipped = 0;
    for &peak in ecg_peaks {
        let t_peak = peak as f64 / ecg_rate;
        // first PPG sample strictly after the peak
        let lo = ((t_peak * ppg_rate).floor() as usize + 1).max(1);
        let hi = (((t_peak + PTT_SEARCH_S) * ppg_rate + 1e-9).floor() as usize)
            .min(ppg.len().saturating_sub(2));
        let mut best: Option<(usize, f64)> = None;
        for j in lo..=hi {
            let slope = (ppg[j + 1] - ppg[j - 1]) / 2.0;
            if best.is_none_or(|(_, b)| slope > b) {
                best = Some((j, slope));
            }
        }
        match best {
            Some((j, slope)) if slope > 0.0 && hi >= lo => {
                per_beat.push(j as f64 / ppg_rate - t_peak);
            }
            _ => skipped += 1,
        }
    }
    let median = median(&per_beat);
    PttResult { per_beat, median, skipped }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_bins() {
        let bins = rms_bins(&[-3.0; 250], 100.0, 500.0).unwrap();
        assert_eq!(bins.len(), 5);
        assert!(bins.iter().all(|b| (*b - 3.0).abs() < 1e-12));
    }

    #[test]
    fn sine_bins_are_one_over_root_two() {
        let fs = 500.0;
        let x: Vec<f64> = (0..500).map(|n| (2.0 * PI * 10.0 * n as f64 / fs).sin()).collect();
        for b in rms_bins(&x, 100.0, fs).unwrap() {
            assert!((b - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01);
        }
    }

    #[test]
    fn bin_counting() {
        assert_eq!(rms_bins(&vec![1.0; 5000], 100.0, 500.0).unwrap().len(), 100);
        assert_eq!(rms_bins(&vec![1.0; 5049], 100.0, 500.0).unwrap().len(), 100);
        assert!(rms_bins(&[], 100.0, 500.0).unwrap().is_empty());
        assert!(rms_bins(&[1.0], 0.5, 500.0).is_err());
    }

    #[test]
    fn flat_ecg_has_no_peaks() {
        assert!(detect_r_peaks(&vec![0.0; 5000], 500.0).is_empty());
        assert!(detect_r_peaks(&[], 500.0).is_empty());
    }

    #[test]
    fn ptt_on_ideal_ramp() {
        let fs = 100.0;
        // rise centered at sample 42 after a peak at 20
        let ppg: Vec<f64> = (0..200).map(|n| 1.0 / (1.0 + (-(n as f64 - 42.0) / 2.0).exp())).collect();
        let r = ptt(&[20], &ppg, fs);
        assert_eq!(r.per_beat.len(), 1);
        assert!((r.median.unwrap() - 0.22).abs() < 1e-12);
    }

    #[test]
    fn ptt_skips_beats_without_rise() {
        let ppg = vec![1.0; 300];
        let r = ptt(&[10, 100], &ppg, 100.0);
        assert_eq!(r.skipped, 2);
        assert_eq!(r.median, None);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
