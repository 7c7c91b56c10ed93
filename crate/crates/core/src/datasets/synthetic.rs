use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::stream_rng;
use crate::signal::{apply_filter, design_butterworth_bandpass, Waveform};

use super::{Label, Segment};

/// Parameters of the built-in two-class corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub seed: u64,
    /// Rate the recordings are generated at, before preprocessing.
    pub native_rate: u32,
    pub duration_s: f64,
    /// Band the tones and noise bursts are drawn from.
    pub band_hz: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 1000,
            seed: 0,
            native_rate: 8000,
            duration_s: 2.0,
            band_hz: (120.0, 1800.0),
        }
    }
}

/// Hann-shaped burst placement: `(start, length)` in samples.
fn burst(rng: &mut ChaCha8Rng, total: usize, fs: f64) -> (usize, usize) {
    let len = (rng.random_range(0.3..0.7) * fs) as usize;
    let start = rng.random_range(0..total.saturating_sub(len).max(1));
    (start, len.min(total - start))
}

fn envelope(i: usize, len: usize) -> f64 {
    (PI * i as f64 / len as f64).sin().powi(2)
}

fn tone_bursts(rng: &mut ChaCha8Rng, x: &mut [f64], fs: f64, band: (f64, f64)) {
    for _ in 0..rng.random_range(1..=3) {
        let f = rng.random_range(band.0 + 50.0..band.1 - 50.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let amp = rng.random_range(0.3..0.6);
        let (start, len) = burst(rng, x.len(), fs);
        for i in 0..len {
            x[start + i] += amp * envelope(i, len) * (2.0 * PI * f * i as f64 / fs + phase).sin();
        }
    }
}

fn noise_bursts(rng: &mut ChaCha8Rng, x: &mut [f64], fs: f64, band: (f64, f64)) {
    for _ in 0..rng.random_range(1..=3) {
        let width = rng.random_range(200.0..500.0);
        let lo = rng.random_range(band.0..band.1 - width);
        let filter = design_butterworth_bandpass(4, lo, lo + width, fs as u32).expect("band inside Nyquist");
        let (start, len) = burst(rng, x.len(), fs);
        let raw: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        let shaped = apply_filter(&filter, &Waveform::new(raw, fs as u32, "")).expect("matching rate");
        let rms = (shaped.samples.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt().max(1e-12);
        // same RMS as a sine of amplitude `amp`, so loudness does not give the class away
        let amp = rng.random_range(0.3..0.6) / (rms * 2f64.sqrt());
        for (i, v) in shaped.samples.iter().enumerate() {
            x[start + i] += amp * envelope(i, len) * v;
        }
    }
}

/// Seeded corpus alternating normal (tone bursts at random frequencies
/// inside the band) and abnormal (band-limited noise bursts) recordings over
/// a faint white-noise floor. Recording `i` depends only on the seed and `i`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Vec<Segment> {
    let fs = cfg.native_rate as f64;
    let n = (cfg.duration_s * fs).round() as usize;
    (0..cfg.count)
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, 1000 + i as u64);
            let label = if i % 2 == 0 { Label::Normal } else { Label::Abnormal };
            let mut x: Vec<f64> = (0..n)
                .map(|_| 0.01 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            match label {
                Label::Normal => tone_bursts(&mut rng, &mut x, fs, cfg.band_hz),
                Label::Abnormal => noise_bursts(&mut rng, &mut x, fs, cfg.band_hz),
            }
            let name = format!("synthetic_{i:05}");
            Segment {
                waveform: Waveform::new(x, cfg.native_rate, name.clone()),
                label,
                origin_file: format!("{name}.wav"),
                start_s: 0.0,
                end_s: cfg.duration_s,
                patient_id: None,
            }
        })
        .collect()
}
