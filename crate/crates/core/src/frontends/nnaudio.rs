use std::f64::consts::PI;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::signal::{window, Waveform};

use super::mel::{mel_filterbank_matrix, mel_points};
use super::{FeatureMap, FrontendConfig, NnAudioIds, Result};

/// Plain-value parameters of the learnable STFT + mel frontend.
#[derive(Debug, Clone, PartialEq)]
pub struct NnAudioParams {
    /// `[n_bins, window_samples]` windowed cosine basis.
    pub cos: Tensor,
    /// `[n_bins, window_samples]` windowed negative sine basis.
    pub sin: Tensor,
    /// `[n_filters, n_bins]` mel projection.
    pub mel_weights: Tensor,
}

impl NnAudioParams {
    pub(crate) fn register(&self, store: &mut ParamStore) -> Result<NnAudioIds> {
        Ok(NnAudioIds {
            cos: store.add("nnaudio.stft_cos", self.cos.clone()),
            sin: store.add("nnaudio.stft_sin", self.sin.clone()),
            mel: store.add("nnaudio.mel_weights", self.mel_weights.clone()),
        })
    }
}

/// Windowed DFT basis for bins `0..=n_fft/2` and the fixed frontend's mel matrix.
pub fn init_nnaudio(cfg: &FrontendConfig, n_fft: usize) -> NnAudioParams {
    let win_len = cfg.window_samples();
    let win = window(cfg.window, win_len);
    let n_bins = n_fft / 2 + 1;
    let mut cos = Vec::with_capacity(n_bins * win_len);
    let mut sin = Vec::with_capacity(n_bins * win_len);
    for k in 0..n_bins {
        for (n, &w) in win.iter().enumerate() {
            // reduce k*n mod n_fft first so large products keep full precision
            let phase = 2.0 * PI * ((k * n) % n_fft) as f64 / n_fft as f64;
            cos.push(w * phase.cos());
            sin.push(if k == 0 { 0.0 } else { -w * phase.sin() });
        }
    }
    let fb = mel_filterbank_matrix(cfg, n_fft);
    NnAudioParams {
        cos: Tensor::new(vec![n_bins, win_len], cos).expect("basis shape"),
        sin: Tensor::new(vec![n_bins, win_len], sin).expect("basis shape"),
        mel_weights: Tensor::new(vec![cfg.n_filters, n_bins], fb.weights).expect("mel shape"),
    }
}

pub(crate) fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    ids: &NnAudioIds,
    cfg: &FrontendConfig,
    batch: &[&Waveform],
) -> Result<Var> {
    let (n, len) = (batch.len(), batch[0].len());
    cfg.frames_for(len)?;
    let mut samples = Vec::with_capacity(n * len);
    for w in batch {
        samples.extend_from_slice(&w.samples);
    }
    let x = tape.constant(Tensor::new(vec![n, 1, len], samples)?);
    let cos = tape.param(store, ids.cos);
    let sin = tape.param(store, ids.sin);
    let mel = tape.param(store, ids.mel);
    project(tape, x, cos, sin, mel, cfg.hop_samples(), cfg.log_eps)
}

/// `ln(relu(mel · (re^2 + im^2)) + eps)` for signals `x [n, 1, len]`, basis
/// banks `[n_bins, window]` and mel weights `[channels, n_bins]`, giving
/// `[n, frames, channels]`.
pub(crate) fn project(tape: &mut Tape, x: Var, cos: Var, sin: Var, mel: Var, hop: usize, log_eps: f64) -> Result<Var> {
    let n = tape.shape(x)[0];
    let mut bank = |p: Var| -> Result<Var> {
        let shape = tape.shape(p).to_vec();
        let kernel = tape.reshape(p, &[shape[0], 1, shape[1]])?;
        let y = tape.conv1d(x, kernel, None, hop, 0)?;
        Ok(tape.mul(y, y)?)
    };
    let re2 = bank(cos)?;
    let im2 = bank(sin)?;
    let power = tape.add(re2, im2)?;
    let (n_bins, frames) = (tape.shape(power)[1], tape.shape(power)[2]);
    let power = tape.transpose(power)?;
    let power = tape.reshape(power, &[n * frames, n_bins])?;
    let mel_t = tape.transpose(mel)?;
    let projected = tape.matmul(power, mel_t)?;
    let projected = tape.relu(projected)?;
    let logged = tape.log_eps(projected, log_eps)?;
    let channels = tape.shape(logged)[1];
    Ok(tape.reshape(logged, &[n, frames, channels])?)
}

/// Features of one waveform under explicit parameter values.
pub fn nnaudio_frontend(w: &Waveform, p: &NnAudioParams, cfg: &FrontendConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    cfg.check_input(w)?;
    let mut store = ParamStore::new();
    let ids = p.register(&mut store)?;
    let mut tape = Tape::new();
    let out = forward(&mut tape, &store, &ids, cfg, &[w])?;
    let value = tape.value(out);
    Ok(FeatureMap {
        data: value.data().to_vec(),
        frames: value.shape()[1],
        channels: value.shape()[2],
        frame_rate: cfg.frame_rate(),
        channel_center_hz: mel_points(cfg)[1..=cfg.n_filters].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontends::mel_frontend;
    use crate::signal::WindowKind;

    #[test]
    fn basis_rows_at_dc() {
        let cfg = FrontendConfig::default();
        let p = init_nnaudio(&cfg, 128);
        let win = window(WindowKind::Hann, 120);
        assert_eq!(p.cos.shape(), &[65, 120]);
        assert_eq!(&p.cos.data()[..120], win.as_slice());
        assert!(p.sin.data()[..120].iter().all(|&v| v == 0.0));
        assert_eq!(p.mel_weights.data(), mel_filterbank_matrix(&cfg, 128).weights.as_slice());
    }

    #[test]
    fn matches_fixed_mel_at_init() {
        let cfg = FrontendConfig::default();
        let p = init_nnaudio(&cfg, cfg.n_fft());
        let x = (0..8000).map(|i| ((i * 7919 % 1000) as f64 / 500.0) - 1.0).collect();
        let w = Waveform::new(x, 4000, "r");
        let a = nnaudio_frontend(&w, &p, &cfg).unwrap();
        let b = mel_frontend(&w, &cfg).unwrap();
        assert_eq!((a.frames, a.channels), (b.frames, b.channels));
        let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }
}
