//! Butterworth and notch IIR design as cascades of second-order sections.
//!
//! Butterworth filters are designed from the analog prototype, transformed
//! to the target band in the s-plane with pre-warped edges, and mapped to
//! the z-plane with the bilinear transform. Poles are then grouped into
//! biquads: conjugate pairs first, remaining real poles two at a time.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Bandpass,
    Notch,
}

/// Filter request.
///
/// `f_lo` is the cutoff of a highpass and `f_hi` the cutoff of a lowpass;
/// the other edge is ignored. A notch is centered at `(f_lo + f_hi) / 2`
/// with `f_hi - f_lo` as its -3 dB bandwidth. For a bandpass `order` is the
/// total order, so order 10 yields five sections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    #[serde(default)]
    pub f_lo: f64,
    #[serde(default)]
    pub f_hi: f64,
    pub sample_rate: f64,
}

impl FilterSpec {
    pub fn bandpass(order: usize, f_lo: f64, f_hi: f64, sample_rate: f64) -> Self {
        Self { kind: FilterKind::Bandpass, order, f_lo, f_hi, sample_rate }
    }

    pub fn lowpass(order: usize, cutoff: f64, sample_rate: f64) -> Self {
        Self { kind: FilterKind::Lowpass, order, f_lo: 0.0, f_hi: cutoff, sample_rate }
    }

    pub fn highpass(order: usize, cutoff: f64, sample_rate: f64) -> Self {
        Self { kind: FilterKind::Highpass, order, f_lo: cutoff, f_hi: 0.0, sample_rate }
    }

    /// Second-order notch at `center` with quality factor `q`.
    pub fn notch(center: f64, q: f64, sample_rate: f64) -> Self {
        let half_bw = center / q / 2.0;
        Self {
            kind: FilterKind::Notch,
            order: 2,
            f_lo: center - half_bw,
            f_hi: center + half_bw,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let nyq = self.sample_rate / 2.0;
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(DspError::Design(format!("sample rate {} must be positive", self.sample_rate)));
        }
        if self.order < 2 || !self.order.is_multiple_of(2) {
            return Err(DspError::Design(format!("order {} must be an even integer >= 2", self.order)));
        }
        let in_band = |f: f64| f.is_finite() && f > 0.0 && f < nyq;
        match self.kind {
            FilterKind::Lowpass if !in_band(self.f_hi) => Err(DspError::Design(format!(
                "lowpass cutoff {} Hz must lie in (0, {nyq}) Hz",
                self.f_hi
            ))),
            FilterKind::Highpass if !in_band(self.f_lo) => Err(DspError::Design(format!(
                "highpass cutoff {} Hz must lie in (0, {nyq}) Hz",
                self.f_lo
            ))),
            FilterKind::Bandpass | FilterKind::Notch
                if !(in_band(self.f_lo) && in_band(self.f_hi) && self.f_lo < self.f_hi) =>
            {
                Err(DspError::Design(format!(
                    "band edges {}..{} Hz must satisfy 0 < lo < hi < {nyq} Hz",
                    self.f_lo, self.f_hi
                )))
            }
            FilterKind::Notch if self.order != 2 => {
                Err(DspError::Design("a notch is a single second-order section".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }

    /// Pole magnitudes of this section.
    pub fn pole_radii(&self) -> [f64; 2] {
        // z^2 + a1 z + a2 = 0
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let p1 = (-self.a1 + disc) / 2.0;
        let p2 = (-self.a1 - disc) / 2.0;
        [p1.norm(), p2.norm()]
    }

    /// Direct-form-II-transposed state for a constant unit input held forever.
    fn step_state(&self) -> [f64; 2] {
        let y = (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2);
        let z2 = self.b2 - self.a2 * y;
        let z1 = self.b1 - self.a1 * y + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }
}

/// Cascade of biquads. Coefficients only; running state lives in [`SosFilter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosCascade {
    pub sections: Vec<Biquad>,
}

impl SosCascade {
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Complex response at `freq` Hz.
    pub fn response(&self, freq: f64, sample_rate: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / sample_rate);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude_db(&self, freq: f64, sample_rate: f64) -> f64 {
        20.0 * self.response(freq, sample_rate).norm().log10()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.pole_radii())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_radius() < 1.0
    }

    /// Causal filtering from zero initial state.
    pub fn filter(&self, x: &[f64]) -> Result<Vec<f64>, DspError> {
        check_finite(x)?;
        let mut f = SosFilter::new(self.clone());
        Ok(x.iter().map(|&v| f.process(v)).collect())
    }

    /// Zero-phase forward-backward filtering.
    ///
    /// The input is extended at both ends by `3 * order` samples of odd
    /// reflection and each pass starts from the steady state for the first
    /// sample it sees, which keeps edge transients small.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>, DspError> {
        check_finite(x)?;
        let n = x.len();
        if n < 2 {
            return Ok(x.to_vec());
        }
        let pad = (3 * self.order()).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let mut f = SosFilter::new(self.clone());
        f.prime(ext[0]);
        let mut fwd: Vec<f64> = ext.iter().map(|&v| f.process(v)).collect();
        fwd.reverse();
        f.prime(fwd[0]);
        let mut back: Vec<f64> = fwd.iter().map(|&v| f.process(v)).collect();
        back.reverse();
        Ok(back[pad..pad + n].to_vec())
    }
}

/// Streaming cascade with per-section state.
#[derive(Debug, Clone)]
pub struct SosFilter {
    cascade: SosCascade,
    state: Vec<[f64; 2]>,
}

impl SosFilter {
    pub fn new(cascade: SosCascade) -> Self {
        let state = vec![[0.0; 2]; cascade.sections.len()];
        Self { cascade, state }
    }

    pub fn cascade(&self) -> &SosCascade {
        &self.cascade
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }

    /// Sets the state to what it would be after an infinitely long constant
    /// input of value `level`.
    pub fn prime(&mut self, level: f64) {
        let mut input = level;
        for (section, state) in self.cascade.sections.iter().zip(&mut self.state) {
            let zi = section.step_state();
            *state = [zi[0] * input, zi[1] * input];
            input *= section.dc_gain();
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (s, z) in self.cascade.sections.iter().zip(&mut self.state) {
            let y = s.b0 * v + z[0];
            z[0] = s.b1 * v - s.a1 * y + z[1];
            z[1] = s.b2 * v - s.a2 * y;
            v = y;
        }
        v
    }
}

fn check_finite(x: &[f64]) -> Result<(), DspError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(DspError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Designs a Butterworth cascade (or a second-order notch) for `spec`.
pub fn design_butterworth(spec: &FilterSpec) -> Result<SosCascade, DspError> {
    spec.validate()?;
    let cascade = match spec.kind {
        FilterKind::Notch => design_notch(spec),
        _ => design_zpk(spec),
    };
    if !cascade.is_stable() {
        return Err(DspError::Design(format!(
            "designed cascade is unstable (max pole radius {})",
            cascade.max_pole_radius()
        )));
    }
    Ok(cascade)
}

fn warp(freq: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * freq / fs).tan()
}

fn design_zpk(spec: &FilterSpec) -> SosCascade {
    let fs = spec.sample_rate;
    let proto_order = match spec.kind {
        FilterKind::Bandpass => spec.order / 2,
        _ => spec.order,
    };
    let proto: Vec<Complex64> = (0..proto_order)
        .map(|k| {
            let theta = PI * (2 * k + 1 + proto_order) as f64 / (2 * proto_order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    let analog_poles: Vec<Complex64> = match spec.kind {
        FilterKind::Lowpass => {
            let wc = warp(spec.f_hi, fs);
            proto.iter().map(|p| p * wc).collect()
        }
        FilterKind::Highpass => {
            let wc = warp(spec.f_lo, fs);
            proto.iter().map(|p| wc / p).collect()
        }
        FilterKind::Bandpass => {
            let w1 = warp(spec.f_lo, fs);
            let w2 = warp(spec.f_hi, fs);
            let bw = w2 - w1;
            let w0_sq = w1 * w2;
            proto
                .iter()
                .flat_map(|p| {
                    let pb = p * bw;
                    let root = (pb * pb - 4.0 * w0_sq).sqrt();
                    [(pb + root) / 2.0, (pb - root) / 2.0]
                })
                .collect()
        }
        FilterKind::Notch => unreachable!("notch handled separately"),
    };

    let fs2 = 2.0 * fs;
    let poles: Vec<Complex64> = analog_poles.iter().map(|s| (fs2 + s) / (fs2 - s)).collect();

    // Zeros per section: lowpass {-1,-1}, highpass {1,1}, bandpass {1,-1}.
    let (numerator, ref_freq) = match spec.kind {
        FilterKind::Lowpass => ([1.0, 2.0, 1.0], 0.0),
        FilterKind::Highpass => ([1.0, -2.0, 1.0], fs / 2.0),
        _ => {
            let center = (warp(spec.f_lo, fs) * warp(spec.f_hi, fs)).sqrt();
            ([1.0, 0.0, -1.0], fs / PI * (center / fs2).atan())
        }
    };

    let mut sections: Vec<Biquad> = pair_poles(&poles)
        .into_iter()
        .map(|(a1, a2)| Biquad { b0: numerator[0], b1: numerator[1], b2: numerator[2], a1, a2 })
        .collect();

    // The passband reference (DC, Nyquist or band center) has unit gain for
    // a Butterworth response; normalize every section there.
    let z_inv = Complex64::from_polar(1.0, -2.0 * PI * ref_freq / fs);
    for s in &mut sections {
        let g = s.response(z_inv).norm();
        s.b0 /= g;
        s.b1 /= g;
        s.b2 /= g;
    }
    SosCascade { sections }
}

/// Groups poles into denominator pairs `(a1, a2)`.
fn pair_poles(poles: &[Complex64]) -> Vec<(f64, f64)> {
    const IMAG_EPS: f64 = 1e-12;
    let mut out = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for p in poles {
        if p.im > IMAG_EPS {
            out.push((-2.0 * p.re, p.norm_sqr()));
        } else if p.im.abs() <= IMAG_EPS {
            reals.push(p.re);
        }
    }
    reals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for pair in reals.chunks(2) {
        match *pair {
            [r1, r2] => out.push((-(r1 + r2), r1 * r2)),
            [r] => out.push((-r, 0.0)),
            _ => unreachable!(),
        }
    }
    out
}

fn design_notch(spec: &FilterSpec) -> SosCascade {
    let fs = spec.sample_rate;
    let center = (spec.f_lo + spec.f_hi) / 2.0;
    let bw = spec.f_hi - spec.f_lo;
    let w0 = 2.0 * PI * center / fs;
    let beta = (PI * bw / fs).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    SosCascade {
        sections: vec![Biquad {
            b0: gain,
            b1: -2.0 * gain * c,
            b2: gain,
            a1: -2.0 * gain * c,
            a2: 2.0 * gain - 1.0,
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analytic digital Butterworth magnitude in dB, via the pre-warped
    /// lowpass-equivalent frequency.
    fn oracle_db(spec: &FilterSpec, f: f64) -> f64 {
        let fs = spec.sample_rate;
        let w = warp(f, fs);
        let (n, x) = match spec.kind {
            FilterKind::Lowpass => (spec.order, w / warp(spec.f_hi, fs)),
            FilterKind::Highpass => (spec.order, warp(spec.f_lo, fs) / w),
            FilterKind::Bandpass => {
                let w1 = warp(spec.f_lo, fs);
                let w2 = warp(spec.f_hi, fs);
                (spec.order / 2, (w * w - w1 * w2) / (w * (w2 - w1)))
            }
            FilterKind::Notch => unreachable!(),
        };
        -10.0 * (1.0 + x.abs().powi(2 * n as i32)).log10()
    }

    #[test]
    fn bandpass_matches_analytic_magnitude() {
        let spec = FilterSpec::bandpass(10, 0.5, 30.0, 500.0);
        let sos = design_butterworth(&spec).unwrap();
        assert_eq!(sos.sections.len(), 5);
        for f in [0.1, 0.5, 1.0, 5.0, 12.0, 30.0, 45.0, 100.0, 200.0] {
            let got = sos.magnitude_db(f, 500.0);
            let want = oracle_db(&spec, f);
            assert!((got - want).abs() < 1e-6, "f={f}: {got} vs {want}");
        }
        assert!((sos.magnitude_db(30.0, 500.0) + 3.0).abs() < 0.1);
        assert!((sos.magnitude_db(0.5, 500.0) + 3.0).abs() < 0.1);
    }

    #[test]
    fn bandpass_endpoints_are_zero() {
        let sos = design_butterworth(&FilterSpec::bandpass(4, 8.0, 12.0, 250.0)).unwrap();
        assert!(sos.response(0.0, 250.0).norm() < 1e-12);
        assert!(sos.response(125.0, 250.0).norm() < 1e-12);
    }

    #[test]
    fn lowpass_quarter_rate_matches_hand_bilinear() {
        // fc = fs/4: K = tan(pi/4) = 1, so for the order-2 prototype
        // b = [1, 2, 1] / (2 + sqrt2), a1 = 0, a2 = (2 - sqrt2) / (2 + sqrt2).
        let sos = design_butterworth(&FilterSpec::lowpass(2, 250.0, 1000.0)).unwrap();
        let s = sos.sections[0];
        let r2 = 2f64.sqrt();
        let d = 2.0 + r2;
        assert!((s.b0 - 1.0 / d).abs() < 1e-12);
        assert!((s.b1 - 2.0 / d).abs() < 1e-12);
        assert!((s.b2 - 1.0 / d).abs() < 1e-12);
        assert!(s.a1.abs() < 1e-12);
        assert!((s.a2 - (2.0 - r2) / d).abs() < 1e-12);
    }

    #[test]
    fn highpass_and_lowpass_hit_minus_three_db() {
        for spec in [FilterSpec::lowpass(6, 40.0, 500.0), FilterSpec::highpass(4, 0.5, 500.0)] {
            let sos = design_butterworth(&spec).unwrap();
            let fc = if spec.kind == FilterKind::Lowpass { spec.f_hi } else { spec.f_lo };
            assert!((sos.magnitude_db(fc, 500.0) - oracle_db(&spec, fc)).abs() < 1e-6);
            assert!(sos.is_stable());
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(design_butterworth(&FilterSpec::bandpass(10, 0.5, 250.0, 500.0)).is_err());
        assert!(design_butterworth(&FilterSpec::bandpass(10, 30.0, 0.5, 500.0)).is_err());
        assert!(design_butterworth(&FilterSpec::lowpass(3, 10.0, 500.0)).is_err());
        assert!(design_butterworth(&FilterSpec::lowpass(0, 10.0, 500.0)).is_err());
        assert!(design_butterworth(&FilterSpec::highpass(2, 300.0, 500.0)).is_err());
    }

    #[test]
    fn impulse_through_single_biquad_follows_recursion() {
        let s = Biquad { b0: 0.5, b1: 0.25, b2: -0.125, a1: -0.6, a2: 0.2 };
        let sos = SosCascade { sections: vec![s] };
        let mut x = vec![0.0; 5];
        x[0] = 1.0;
        let y = sos.filter(&x).unwrap();
        // y[n] = b*x - a1 y[n-1] - a2 y[n-2], worked by hand:
        let expect = [
            0.5,
            0.25 + 0.6 * 0.5,                                 // 0.55
            -0.125 + 0.6 * 0.55 - 0.2 * 0.5,                  // 0.105
            0.6 * 0.105 - 0.2 * 0.55,                         // -0.047
            0.6 * -0.047 - 0.2 * 0.105,                       // -0.0492
        ];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let sos = design_butterworth(&FilterSpec::bandpass(10, 0.5, 30.0, 500.0)).unwrap();
        assert!(sos.filter(&[0.0; 100]).unwrap().iter().all(|v| *v == 0.0));
        assert!(sos.filtfilt(&[0.0; 100]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn notch_removes_mains() {
        let fs = 500.0;
        let sos = design_butterworth(&FilterSpec::notch(50.0, 30.0, fs)).unwrap();
        let x: Vec<f64> = (0..5000).map(|i| (2.0 * PI * 50.0 * i as f64 / fs).sin()).collect();
        let y = sos.filter(&x).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        let settled = &y[2500..];
        assert!(rms(settled) < 0.01 * rms(&x[2500..]));
        // passband away from the notch is untouched
        assert!(sos.magnitude_db(10.0, fs).abs() < 0.05);
        let center = sos.magnitude_db(50.0, fs);
        assert!(center < -100.0);
        assert!((sos.magnitude_db(50.0 + 50.0 / 60.0, fs) + 3.0103).abs() < 0.05);
    }

    #[test]
    fn impulse_response_decays() {
        let sos = design_butterworth(&FilterSpec::bandpass(10, 0.5, 15.0, 500.0)).unwrap();
        let mut x = vec![0.0; 40_000];
        x[0] = 1.0;
        let y = sos.filter(&x).unwrap();
        assert!(y[30_000..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn non_finite_input_reports_index() {
        let sos = design_butterworth(&FilterSpec::lowpass(2, 10.0, 100.0)).unwrap();
        assert_eq!(sos.filter(&[0.0, 1.0, f64::NAN]), Err(DspError::NonFinite { index: 2 }));
        assert_eq!(
            sos.filtfilt(&[f64::INFINITY, 1.0]),
            Err(DspError::NonFinite { index: 0 })
        );
    }

    #[test]
    fn filtfilt_preserves_symmetry() {
        let sos = design_butterworth(&FilterSpec::bandpass(4, 1.0, 20.0, 200.0)).unwrap();
        let n = 4001;
        let mid = (n / 2) as f64;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 - mid) / 200.0;
                (-t * t / 0.02).exp() * (2.0 * PI * 7.0 * t).cos()
            })
            .collect();
        let y = sos.filtfilt(&x).unwrap();
        for i in 0..n / 2 {
            assert!((y[i] - y[n - 1 - i]).abs() < 1e-9, "i={i}");
        }
    }

    #[test]
    fn filtfilt_has_no_delay() {
        let fs = 500.0;
        let sos = design_butterworth(&FilterSpec::bandpass(10, 0.5, 30.0, fs)).unwrap();
        let x: Vec<f64> = (0..20_000).map(|i| (2.0 * PI * 5.0 * i as f64 / fs).sin()).collect();
        let y = sos.filtfilt(&x).unwrap();
        for i in 8000..12_000 {
            assert!((y[i] - x[i]).abs() < 1e-3, "i={i} {} vs {}", y[i], x[i]);
        }
    }
}
