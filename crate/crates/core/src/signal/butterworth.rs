use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::{SignalError, Waveform};

/// Second-order section normalized to `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Transfer function evaluated at `z`.
    pub fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let zi2 = zi * zi;
        (self.b0 + self.b1 * zi + self.b2 * zi2) / (1.0 + self.a1 * zi + self.a2 * zi2)
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignMeta {
    /// Total digital order; the analog prototype has half of it.
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
    pub design_meta: DesignMeta,
}

impl BiquadCascade {
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq_hz / self.design_meta.sample_rate as f64);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z))
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// Digital Butterworth bandpass of total order `order` (prototype order `order / 2`).
///
/// Built from the analog lowpass prototype by the lowpass-to-bandpass
/// substitution, then mapped with the bilinear transform after pre-warping
/// both band edges, so the −3 dB points land exactly on `low_hz` and `high_hz`.
pub fn design_butterworth_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    sample_rate: u32,
) -> Result<BiquadCascade, SignalError> {
    if order < 2 || !order.is_multiple_of(2) {
        return Err(SignalError::Design(format!(
            "bandpass order must be even and at least 2, got {order}"
        )));
    }
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(SignalError::Design(format!(
            "cut-offs must satisfy 0 < low < high < {nyquist} Hz, got [{low_hz}, {high_hz}]"
        )));
    }

    let proto_order = order / 2;
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let (w_lo, w_hi) = (warp(low_hz), warp(high_hz));
    let w0_sq = w_lo * w_hi;
    let bw = w_hi - w_lo;

    let mut digital_poles = Vec::with_capacity(order);
    for k in 0..proto_order {
        let theta = PI * (2 * k + proto_order + 1) as f64 / (2 * proto_order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * bw / 2.0;
        let root = (half * half - w0_sq).sqrt();
        for s in [half + root, half - root] {
            digital_poles.push((2.0 * fs + s) / (2.0 * fs - s));
        }
    }

    // Pair conjugates; any real poles pair up among themselves.
    let mut upper: Vec<Complex64> = digital_poles.iter().copied().filter(|z| z.im > 1e-12).collect();
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    let mut real: Vec<f64> = digital_poles
        .iter()
        .filter(|z| z.im.abs() <= 1e-12)
        .map(|z| z.re)
        .collect();
    real.sort_by(f64::total_cmp);

    let mut denominators: Vec<(f64, f64)> = upper.iter().map(|z| (-2.0 * z.re, z.norm_sqr())).collect();
    for pair in real.chunks(2) {
        match pair {
            [r1, r2] => denominators.push((-(r1 + r2), r1 * r2)),
            _ => return Err(SignalError::Design("unpaired real pole".into())),
        }
    }
    if denominators.len() != proto_order {
        return Err(SignalError::Design(format!(
            "expected {proto_order} sections, paired {}",
            denominators.len()
        )));
    }

    let center = Complex64::from_polar(1.0, 2.0 * (w0_sq.sqrt() / (2.0 * fs)).atan());
    let sections = denominators
        .into_iter()
        .map(|(a1, a2)| {
            let raw = Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 };
            let g = 1.0 / raw.response(center).norm();
            Biquad { b0: g, b1: 0.0, b2: -g, a1, a2 }
        })
        .collect();

    Ok(BiquadCascade {
        sections,
        design_meta: DesignMeta {
            order,
            low_hz,
            high_hz,
            sample_rate,
        },
    })
}

/// Single causal pass through the cascade, direct form II transposed, zero initial state.
pub fn apply_filter(c: &BiquadCascade, w: &Waveform) -> Result<Waveform, SignalError> {
    if c.design_meta.sample_rate != w.sample_rate {
        return Err(SignalError::RateMismatch {
            designed: c.design_meta.sample_rate,
            actual: w.sample_rate,
        });
    }
    let mut y = w.samples.clone();
    for s in &c.sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let x = *v;
            let out = s.b0 * x + z1;
            z1 = s.b1 * x - s.a1 * out + z2;
            z2 = s.b2 * x - s.a2 * out;
            *v = out;
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SignalError::NonFinite("apply_filter"));
    }
    Ok(w.with_samples(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: u32, n: usize) -> Waveform {
        Waveform::new(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs as f64).sin()).collect(),
            fs,
            "sine",
        )
    }

    fn steady_amplitude(w: &Waveform) -> f64 {
        let tail = &w.samples[w.len() / 2..];
        tail.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn respiratory_design_has_six_stable_sections() {
        let c = design_butterworth_bandpass(12, 120.0, 1800.0, 4000).unwrap();
        assert_eq!(c.sections.len(), 6);
        assert!(c.max_pole_radius() < 1.0 - 1e-9);
        for f in [120.0, 1800.0] {
            let db = c.magnitude_db(f);
            assert!((-3.5..=-2.5).contains(&db), "{f} Hz: {db} dB");
        }
    }

    #[test]
    fn heartbeat_design_cutoffs() {
        let c = design_butterworth_bandpass(12, 25.0, 400.0, 4000).unwrap();
        assert_eq!(c.sections.len(), 6);
        assert!(c.max_pole_radius() < 1.0 - 1e-9);
        assert!((c.magnitude_db(25.0) + 3.0).abs() < 0.5);
        assert!((c.magnitude_db(400.0) + 3.0).abs() < 0.5);
    }

    #[test]
    fn flat_at_geometric_center() {
        for (lo, hi) in [(120.0f64, 1800.0f64), (25.0, 400.0)] {
            let c = design_butterworth_bandpass(12, lo, hi, 4000).unwrap();
            assert!(c.magnitude_db((lo * hi).sqrt()) >= -0.1);
        }
    }

    #[test]
    fn monotone_decay_outside_passband() {
        let c = design_butterworth_bandpass(12, 120.0, 1800.0, 4000).unwrap();
        let below: Vec<f64> = (1..120).map(|f| c.response(f as f64).norm()).collect();
        assert!(below.windows(2).all(|p| p[0] <= p[1]));
        let above: Vec<f64> = (1800..2000).map(|f| c.response(f as f64).norm()).collect();
        assert!(above.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn odd_order_and_bad_cutoffs_rejected() {
        assert!(design_butterworth_bandpass(7, 120.0, 1800.0, 4000).is_err());
        assert!(design_butterworth_bandpass(12, 120.0, 2000.0, 4000).is_err());
        assert!(design_butterworth_bandpass(12, 500.0, 400.0, 4000).is_err());
    }

    #[test]
    fn odd_prototype_order_pairs_real_poles() {
        let c = design_butterworth_bandpass(6, 300.0, 900.0, 8000).unwrap();
        assert_eq!(c.sections.len(), 3);
        assert!((c.magnitude_db(300.0) + 3.01).abs() < 0.05);
    }

    #[test]
    fn silence_stays_silent() {
        let c = design_butterworth_bandpass(12, 120.0, 1800.0, 4000).unwrap();
        let w = Waveform::new(vec![0.0; 1000], 4000, "z");
        assert!(apply_filter(&c, &w).unwrap().samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stopband_sine_is_attenuated() {
        let c = design_butterworth_bandpass(12, 120.0, 1800.0, 4000).unwrap();
        let oracle_db = c.magnitude_db(10.0);
        assert!(oracle_db <= -60.0);
        // 10 Hz needs a long run before the transient settles.
        let out = apply_filter(&c, &sine(10.0, 4000, 40_000)).unwrap();
        assert!(20.0 * steady_amplitude(&out).log10() <= -60.0);
    }

    #[test]
    fn passband_sine_passes() {
        let c = design_butterworth_bandpass(12, 120.0, 1800.0, 4000).unwrap();
        let out = apply_filter(&c, &sine(465.0, 4000, 16_000)).unwrap();
        assert!((steady_amplitude(&out) - 1.0).abs() < 0.01);
    }

    #[test]
    fn rate_mismatch_rejected() {
        let c = design_butterworth_bandpass(12, 120.0, 1800.0, 4000).unwrap();
        let w = Waveform::new(vec![0.0; 10], 8000, "x");
        assert_eq!(
            apply_filter(&c, &w).unwrap_err(),
            SignalError::RateMismatch { designed: 4000, actual: 8000 }
        );
    }
}
