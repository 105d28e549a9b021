//! Iterative radix-2 FFT.
//!
//! In-place decimation-in-time with a bit-reversal permutation up front and
//! one twiddle table per transform. Twiddles are evaluated directly with
//! `sin_cos` rather than by recurrence so the error stays at a few ulps even
//! for large sizes.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::DspError;

/// Forward FFT of `x`, zero-padded or truncated to `n` points.
pub fn fft(x: &[Complex64], n: usize) -> Result<Vec<Complex64>, DspError> {
    check_size(n)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (dst, src) in buf.iter_mut().zip(x) {
        *dst = *src;
    }
    transform(&mut buf, false);
    Ok(buf)
}

/// Forward FFT of a real sequence.
pub fn fft_real(x: &[f64], n: usize) -> Result<Vec<Complex64>, DspError> {
    check_size(n)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (dst, src) in buf.iter_mut().zip(x) {
        dst.re = *src;
    }
    transform(&mut buf, false);
    Ok(buf)
}

/// Inverse FFT, normalized by `1/n` so that `ifft(fft(x)) == x`.
pub fn ifft(spectrum: &[Complex64]) -> Result<Vec<Complex64>, DspError> {
    let n = spectrum.len();
    check_size(n)?;
    let mut buf = spectrum.to_vec();
    transform(&mut buf, true);
    let scale = 1.0 / n as f64;
    for v in &mut buf {
        *v *= scale;
    }
    Ok(buf)
}

/// In-place transform on a buffer whose length is already known to be a
/// power of two. Unnormalized in both directions.
pub(crate) fn transform(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| {
            let (s, c) = (sign * 2.0 * PI * k as f64 / n as f64).sin_cos();
            Complex64::new(c, s)
        })
        .collect();

    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddles[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn check_size(n: usize) -> Result<(), DspError> {
    if n == 0 || !n.is_power_of_two() {
        return Err(DspError::SizeNotPowerOfTwo(n));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn impulse_gives_flat_spectrum() {
        let mut x = vec![c(0.0); 8];
        x[0] = c(1.0);
        let y = fft(&x, 8).unwrap();
        for v in y {
            assert!((v - c(1.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn tone_lands_in_its_bin() {
        let n = 64;
        let k = 5;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * k as f64 * i as f64 / n as f64).cos())
            .collect();
        let y = fft_real(&x, n).unwrap();
        for (bin, v) in y.iter().enumerate() {
            if bin == k || bin == n - k {
                assert!((v.norm() - n as f64 / 2.0).abs() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9, "leak in bin {bin}: {}", v.norm());
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(fft(&[], 12), Err(DspError::SizeNotPowerOfTwo(12)));
        assert_eq!(fft(&[], 0), Err(DspError::SizeNotPowerOfTwo(0)));
        assert!(ifft(&[c(1.0); 3]).is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let x: Vec<Complex64> = (0..32)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let back = ifft(&fft(&x, 32).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn pads_and_truncates() {
        let y = fft_real(&[1.0, 1.0], 4).unwrap();
        assert!((y[0] - c(2.0)).norm() < 1e-15);
        let y = fft_real(&[1.0, 0.0, 5.0, 7.0], 1).unwrap();
        assert_eq!(y, vec![c(1.0)]);
    }
}
