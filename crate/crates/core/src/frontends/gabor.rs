use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use crate::autodiff::{Tape, Tensor, Var};
use crate::signal::{fft_in_place, ifft_in_place, next_fast_len, Complex64};

use super::{FrontendError, Result};

/// Gaussian envelope rate `a` in `exp(-a n^2)` whose spectrum has a
/// half-power full width of `bandwidth` Hz.
fn envelope_rate(bandwidth: f64, sample_rate: f64) -> f64 {
    PI * PI * bandwidth * bandwidth / (2.0 * LN_2 * sample_rate * sample_rate)
}

/// Complex Gabor kernel of `length` taps centered at tap `length / 2`.
///
/// `bandwidth` is the half-power full width of the magnitude response in Hz,
/// so the time-domain Gaussian width is proportional to its inverse. The
/// amplitude is scaled for unit gain at `center_hz`.
pub fn gabor_kernel(center_hz: f64, bandwidth: f64, length: usize, sample_rate: f64) -> Vec<Complex64> {
    let a = envelope_rate(bandwidth, sample_rate);
    let amp = bandwidth * PI / ((2.0 * PI * LN_2).sqrt() * sample_rate);
    let omega = 2.0 * PI * center_hz / sample_rate;
    let half = (length / 2) as f64;
    (0..length)
        .map(|m| {
            let n = m as f64 - half;
            Complex64::from_polar(amp * (-a * n * n).exp(), omega * n)
        })
        .collect()
}

/// Unnormalized Gaussian pooling window of `len` taps; `width` is the
/// standard deviation relative to half the window span.
pub fn pool_window(width: f64, len: usize) -> Vec<f64> {
    let hw = ((len as f64 - 1.0) / 2.0).max(0.5);
    (0..len)
        .map(|j| {
            let u = (j as f64 - hw) / hw;
            (-0.5 * (u / width).powi(2)).exp()
        })
        .collect()
}

fn pool_window_grad(width: f64, len: usize) -> Vec<f64> {
    let hw = ((len as f64 - 1.0) / 2.0).max(0.5);
    pool_window(width, len)
        .into_iter()
        .enumerate()
        .map(|(j, w)| {
            let u = (j as f64 - hw) / hw;
            w * u * u / width.powi(3)
        })
        .collect()
}

/// Geometry shared by the forward and backward passes.
#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    len: usize,
    taps: usize,
    fft_len: usize,
    window: usize,
    hop: usize,
    frames: usize,
    channels: usize,
    sample_rate: f64,
}

impl Geometry {
    /// "Same"-length output of the full convolution, i.e. `|y[t]|^2` for `t` in `0..len`.
    fn energy(&self, xf: &[Complex64], kf: &[Complex64], buf: &mut Vec<Complex64>, energy: &mut [f64]) {
        buf.clear();
        buf.extend(xf.iter().zip(kf).map(|(a, b)| a * b));
        ifft_in_place(buf);
        let half = self.taps / 2;
        for (t, e) in energy.iter_mut().enumerate() {
            *e = buf[t + half].norm_sqr();
        }
    }
}

fn spectrum(signal: &[Complex64], fft_len: usize) -> Vec<Complex64> {
    let mut buf = signal.to_vec();
    buf.resize(fft_len, Complex64::new(0.0, 0.0));
    fft_in_place(&mut buf);
    buf
}

/// Gabor filtering, squared modulus and strided Gaussian pooling in one
/// differentiable step.
///
/// `signals` are equal-length waveforms; `center_hz`, `bandwidth` and
/// `pool_width` are `[channels]` vars. The output is `[n, frames, channels]`
/// with one frame per `hop` samples where a full `window` fits, matching the
/// STFT framing. Convolutions run in the frequency domain; the backward pass
/// recomputes the filter outputs rather than keeping them alive.
#[allow(clippy::too_many_arguments)]
pub fn gabor_pool(
    tape: &mut Tape,
    signals: &[&[f64]],
    center_hz: Var,
    bandwidth: Var,
    pool_width: Var,
    taps: usize,
    window: usize,
    hop: usize,
    sample_rate: f64,
) -> Result<Var> {
    let channels = tape.shape(center_hz).iter().product::<usize>();
    for v in [bandwidth, pool_width] {
        if tape.shape(v).iter().product::<usize>() != channels {
            return Err(FrontendError::Config(format!(
                "Gabor parameter shapes {:?} and {:?} disagree",
                tape.shape(center_hz),
                tape.shape(v)
            )));
        }
    }
    let len = signals.first().map_or(0, |s| s.len());
    if len < window || window == 0 || hop == 0 || taps == 0 {
        return Err(FrontendError::Config(format!(
            "cannot pool {len} samples with window {window}, hop {hop}, {taps} taps"
        )));
    }
    let geo = Geometry {
        n: signals.len(),
        len,
        taps,
        fft_len: next_fast_len(len + taps - 1),
        window,
        hop,
        frames: 1 + (len - window) / hop,
        channels,
        sample_rate,
    };
    let centers = tape.value(center_hz).data().to_vec();
    let widths = tape.value(bandwidth).data().to_vec();
    let pools = tape.value(pool_width).data().to_vec();

    let xf: Arc<Vec<Vec<Complex64>>> = Arc::new(
        signals
            .iter()
            .map(|s| {
                let c: Vec<Complex64> = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                spectrum(&c, geo.fft_len)
            })
            .collect(),
    );
    let kernels: Vec<Vec<Complex64>> = (0..channels)
        .map(|c| gabor_kernel(centers[c], widths[c], taps, sample_rate))
        .collect();
    let kf: Arc<Vec<Vec<Complex64>>> = Arc::new(kernels.iter().map(|k| spectrum(k, geo.fft_len)).collect());

    let mut out = vec![0.0; geo.n * geo.frames * channels];
    let mut buf = Vec::with_capacity(geo.fft_len);
    let mut energy = vec![0.0; len];
    for c in 0..channels {
        let w = pool_window(pools[c], window);
        for n in 0..geo.n {
            geo.energy(&xf[n], &kf[c], &mut buf, &mut energy);
            for f in 0..geo.frames {
                let seg = &energy[f * hop..f * hop + window];
                out[(n * geo.frames + f) * channels + c] = seg.iter().zip(&w).map(|(e, w)| e * w).sum();
            }
        }
    }
    let value = Tensor::new(vec![geo.n, geo.frames, channels], out)?;

    let backward = Box::new(move |g: &[f64], needs: &[bool]| {
        let mut g_center = vec![0.0; geo.channels];
        let mut g_width = vec![0.0; geo.channels];
        let mut g_pool = vec![0.0; geo.channels];
        let need_kernel = needs[0] || needs[1];
        let half = geo.taps / 2;
        let mut buf = Vec::with_capacity(geo.fft_len);
        let mut energy = vec![0.0; geo.len];
        let mut d_energy = vec![0.0; geo.len];
        let mut grad_full = vec![Complex64::new(0.0, 0.0); geo.fft_len];
        for c in 0..geo.channels {
            let w = pool_window(pools[c], geo.window);
            let dw = pool_window_grad(pools[c], geo.window);
            let mut g_w = vec![0.0; geo.window];
            let mut acc = vec![Complex64::new(0.0, 0.0); geo.fft_len];
            for n in 0..geo.n {
                geo.energy(&xf[n], &kf[c], &mut buf, &mut energy);
                d_energy.iter_mut().for_each(|d| *d = 0.0);
                for f in 0..geo.frames {
                    let go = g[(n * geo.frames + f) * geo.channels + c];
                    if go == 0.0 {
                        continue;
                    }
                    let start = f * geo.hop;
                    for j in 0..geo.window {
                        g_w[j] += go * energy[start + j];
                        d_energy[start + j] += go * w[j];
                    }
                }
                if !need_kernel {
                    continue;
                }
                // d|y|^2 = 2 Re(conj(y) dy): the complex gradient of y is 2 dE y.
                grad_full.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for t in 0..geo.len {
                    grad_full[t + half] = buf[t + half] * (2.0 * d_energy[t]);
                }
                fft_in_place(&mut grad_full);
                for ((a, gf), x) in acc.iter_mut().zip(&grad_full).zip(&xf[n]) {
                    *a += gf * x.conj();
                }
            }
            g_pool[c] = g_w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            if !need_kernel {
                continue;
            }
            // Correlating with the real input gives dL/dk for every tap at once.
            ifft_in_place(&mut acc);
            let a = envelope_rate(widths[c], geo.sample_rate);
            let kernel = gabor_kernel(centers[c], widths[c], geo.taps, geo.sample_rate);
            for (m, k) in kernel.iter().enumerate() {
                let nn = m as f64 - half as f64;
                let gk = acc[m];
                let dk_df = k * Complex64::new(0.0, 2.0 * PI * nn / geo.sample_rate);
                let dk_dbw = k * ((1.0 - 2.0 * a * nn * nn) / widths[c]);
                g_center[c] += gk.re * dk_df.re + gk.im * dk_df.im;
                g_width[c] += gk.re * dk_dbw.re + gk.im * dk_dbw.im;
            }
        }
        vec![
            needs[0].then_some(g_center),
            needs[1].then_some(g_width),
            needs[2].then_some(g_pool),
        ]
    });
    Ok(tape.custom("gabor_pool", value, &[center_hz, bandwidth, pool_width], backward)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::fft;

    fn magnitude_spectrum(k: &[Complex64], n: usize) -> Vec<f64> {
        fft(k, n).unwrap().iter().map(|v| v.norm()).collect()
    }

    /// Width in Hz of the region around the peak above half power.
    fn half_power_width(mag: &[f64], fs: f64) -> f64 {
        let n = mag.len();
        let peak = mag.iter().cloned().fold(0.0, f64::max);
        let above = mag[..n / 2].iter().filter(|&&m| m * m >= 0.5 * peak * peak).count();
        above as f64 * fs / n as f64
    }

    #[test]
    fn spectrum_peaks_at_center_bin() {
        let n = 4096;
        for &f in &[60.0, 500.0, 1234.0, 1900.0] {
            let mag = magnitude_spectrum(&gabor_kernel(f, 80.0, 401, 4000.0), n);
            let peak = mag[..n / 2].iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let nearest = (f / 4000.0 * n as f64).round() as usize;
            assert!(peak.abs_diff(nearest) <= 1, "f {f}: peak bin {peak}, expected {nearest}");
            assert!((mag[peak] - 1.0).abs() < 0.02, "gain at center {}", mag[peak]);
        }
    }

    #[test]
    fn bandwidth_is_half_power_width_and_obeys_duality() {
        let n = 16384;
        let narrow = half_power_width(&magnitude_spectrum(&gabor_kernel(1000.0, 100.0, 401, 4000.0), n), 4000.0);
        let wide = half_power_width(&magnitude_spectrum(&gabor_kernel(1000.0, 200.0, 401, 4000.0), n), 4000.0);
        assert!((narrow - 100.0).abs() < 3.0, "{narrow}");
        // doubling the time-domain width halves the spectral width
        assert!((wide / narrow - 2.0).abs() < 0.05, "{wide} / {narrow}");
    }

    #[test]
    fn envelope_is_symmetric() {
        let k = gabor_kernel(321.0, 55.0, 401, 4000.0);
        for i in 0..401 {
            assert!((k[i].norm() - k[400 - i].norm()).abs() < 1e-15);
        }
        assert_eq!(k[200].arg(), 0.0);
    }

    #[test]
    fn pooling_matches_direct_convolution() {
        let fs = 4000.0;
        let x: Vec<f64> = (0..700).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let (taps, window, hop) = (31, 40, 13);
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::from_vec(vec![300.0, 900.0]));
        let b = tape.constant(Tensor::from_vec(vec![120.0, 250.0]));
        let p = tape.constant(Tensor::from_vec(vec![0.4, 0.9]));
        let out = gabor_pool(&mut tape, &[&x], c, b, p, taps, window, hop, fs).unwrap();
        let value = tape.value(out);
        let frames = 1 + (700 - window) / hop;
        assert_eq!(value.shape(), &[1, frames, 2]);
        for (ch, (&f, &bw)) in [300.0, 900.0].iter().zip(&[120.0, 250.0]).enumerate() {
            let k = gabor_kernel(f, bw, taps, fs);
            let energy: Vec<f64> = (0..700)
                .map(|t| {
                    let mut y = Complex64::new(0.0, 0.0);
                    for (m, km) in k.iter().enumerate() {
                        let idx = t as isize + (taps / 2) as isize - m as isize;
                        if (0..700).contains(&idx) {
                            y += km * x[idx as usize];
                        }
                    }
                    y.norm_sqr()
                })
                .collect();
            let w = pool_window([0.4, 0.9][ch], window);
            for fr in 0..frames {
                let expect: f64 = (0..window).map(|j| w[j] * energy[fr * hop + j]).sum();
                let got = value.data()[fr * 2 + ch];
                assert!((got - expect).abs() < 1e-9 * (1.0 + expect.abs()), "{got} vs {expect}");
            }
        }
    }
}
