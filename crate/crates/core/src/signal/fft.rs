use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::SignalError;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn padded(x: &[Complex64], n: usize) -> Result<Vec<Complex64>, SignalError> {
    if !n.is_power_of_two() {
        return Err(SignalError::NotPowerOfTwo(n));
    }
    if x.len() > n {
        return Err(SignalError::InputTooLong { len: x.len(), n });
    }
    let mut buf = x.to_vec();
    buf.resize(n, Complex64::new(0.0, 0.0));
    Ok(buf)
}

/// `n`-point DFT of `x`, zero-padded to `n`. `n` must be a power of two.
pub fn fft(x: &[Complex64], n: usize) -> Result<Vec<Complex64>, SignalError> {
    let mut buf = padded(x, n)?;
    fft_in_place(&mut buf);
    Ok(buf)
}

/// Inverse of [`fft`], including the `1/n` scaling.
pub fn ifft(x: &[Complex64], n: usize) -> Result<Vec<Complex64>, SignalError> {
    let mut buf = padded(x, n)?;
    ifft_in_place(&mut buf);
    Ok(buf)
}

/// Unnormalized forward transform of any length.
pub fn fft_in_place(buf: &mut [Complex64]) {
    if buf.len() > 1 {
        plan(buf.len(), false).process(buf);
    }
}

/// Inverse transform of any length, scaled by `1/len`.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    if n > 1 {
        plan(n, true).process(buf);
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                    let ang = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                    acc + v * Complex64::from_polar(1.0, ang)
                })
            })
            .collect()
    }

    #[test]
    fn impulse_gives_flat_spectrum() {
        let out = fft(&[c(1.0), c(0.0), c(0.0), c(0.0)], 4).unwrap();
        assert!(out.iter().all(|v| (v - c(1.0)).norm() < 1e-15));
    }

    #[test]
    fn zero_input_gives_zero_spectrum() {
        let out = fft(&[c(0.0); 4], 4).unwrap();
        assert!(out.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert_eq!(fft(&[c(1.0)], 6), Err(SignalError::NotPowerOfTwo(6)));
        assert!(matches!(
            fft(&[c(1.0); 9], 8),
            Err(SignalError::InputTooLong { len: 9, n: 8 })
        ));
    }

    #[test]
    fn matches_naive_dft_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Complex64> = (0..64)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let fast = fft(&x, 64).unwrap();
        let slow = naive_dft(&x);
        let scale = slow.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn zero_pads_short_input() {
        let out = fft(&[c(1.0), c(1.0)], 8).unwrap();
        let oracle = naive_dft(&[c(1.0), c(1.0), c(0.0), c(0.0), c(0.0), c(0.0), c(0.0), c(0.0)]);
        for (a, b) in out.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn fast_len() {
        assert_eq!(next_fast_len(8401), 8640);
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(7), 8);
        assert_eq!(next_fast_len(11), 12);
    }
}
