use crate::signal::{stft, Waveform};

use super::{FeatureMap, FrontendConfig, FrontendError};

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_filters + 2` frequencies equally spaced in mel from `fmin` to `fmax`
/// inclusive; filter `i` rises from point `i`, peaks at `i + 1`, falls to `i + 2`.
pub fn mel_points(cfg: &FrontendConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
    let n = cfg.n_filters + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Peak-normalized triangular filters over the one-sided spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// Row-major `n_filters x n_bins`.
    pub weights: Vec<f64>,
    pub n_filters: usize,
    pub n_bins: usize,
    pub center_hz: Vec<f64>,
    /// Rows that no FFT bin falls inside; their channels carry no energy.
    pub empty_rows: Vec<usize>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// `weights · power` for one frame of `n_bins` powers.
    pub fn project(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_filters)
            .map(|m| self.row(m).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

pub fn mel_filterbank_matrix(cfg: &FrontendConfig, n_fft: usize) -> MelFilterbank {
    let points = mel_points(cfg);
    let n_bins = n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / n_fft as f64;
    let mut weights = vec![0.0; cfg.n_filters * n_bins];
    let mut empty_rows = Vec::new();
    for m in 0..cfg.n_filters {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            *w = rise.min(fall).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            empty_rows.push(m);
        }
    }
    if !empty_rows.is_empty() {
        log::warn!(
            "{} of {} mel filters fall between FFT bins (n_fft = {n_fft}) and stay empty",
            empty_rows.len(),
            cfg.n_filters
        );
    }
    MelFilterbank {
        weights,
        n_filters: cfg.n_filters,
        n_bins,
        center_hz: points[1..=cfg.n_filters].to_vec(),
        empty_rows,
    }
}

/// Fixed log-mel frontend: `ln(M · |STFT|² + eps)`.
pub fn mel_frontend(w: &Waveform, cfg: &FrontendConfig) -> Result<FeatureMap, FrontendError> {
    let fb = mel_filterbank_matrix(cfg, cfg.n_fft());
    mel_features(w, cfg, &fb)
}

pub(crate) fn mel_features(
    w: &Waveform,
    cfg: &FrontendConfig,
    fb: &MelFilterbank,
) -> Result<FeatureMap, FrontendError> {
    cfg.check_input(w)?;
    let spec = stft(w, cfg.window_ms, cfg.hop_ms, cfg.window, cfg.n_fft())?;
    let frames = spec.frames.len();
    let mut data = Vec::with_capacity(frames * cfg.n_filters);
    for power in spec.power() {
        data.extend(fb.project(&power).into_iter().map(|e| (e + cfg.log_eps).ln()));
    }
    Ok(FeatureMap {
        data,
        frames,
        channels: cfg.n_filters,
        frame_rate: cfg.frame_rate(),
        channel_center_hz: fb.center_hz.clone(),
    })
}
