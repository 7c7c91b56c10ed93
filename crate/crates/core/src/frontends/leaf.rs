use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::signal::{fft, window, Complex64, Waveform, WindowKind};

use super::gabor::gabor_pool;
use super::mel::mel_points;
use super::pcen::{pcen, PcenParams};
use super::{Compression, FeatureMap, FrontendConfig, LeafIds, Result};

/// Plain-value parameters of the Gabor/PCEN frontend.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafParams {
    pub center_hz: Vec<f64>,
    /// Half-power bandwidth in Hz of each Gabor filter.
    pub bandwidth: Vec<f64>,
    /// Gaussian pooling width relative to half the analysis window.
    pub pool_width: Vec<f64>,
    pub pcen: PcenParams,
}

impl LeafParams {
    pub(crate) fn register(&self, store: &mut ParamStore) -> Result<LeafIds> {
        let mut add = |name: &str, v: &[f64]| store.add(format!("leaf.{name}"), Tensor::from_vec(v.to_vec()));
        Ok(LeafIds {
            center_hz: add("center_hz", &self.center_hz),
            bandwidth: add("bandwidth", &self.bandwidth),
            pool_width: add("pool_width", &self.pool_width),
            alpha: add("pcen_alpha", &self.pcen.alpha),
            delta: add("pcen_delta", &self.pcen.delta),
            root: add("pcen_root", &self.pcen.root),
        })
    }
}

/// Half-power width in Hz of the mainlobe of `kind`'s spectrum for a
/// `len`-sample window, measured on a finely zero-padded DFT.
fn window_half_power_width(kind: WindowKind, len: usize, sample_rate: f64) -> f64 {
    let n = (16 * len).next_power_of_two().max(4096);
    let win: Vec<Complex64> = window(kind, len).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    let spec = fft(&win, n).expect("power-of-two length");
    let peak = spec[0].norm_sqr();
    let above = spec[..n / 2].iter().take_while(|v| v.norm_sqr() >= 0.5 * peak).count();
    // the mainlobe is symmetric about DC
    (2 * above - 1) as f64 * sample_rate / n as f64
}

/// Standard deviation of the squared analysis window, relative to half its span.
fn window_spread(kind: WindowKind, len: usize) -> f64 {
    let power: Vec<f64> = window(kind, len).iter().map(|v| v * v).collect();
    let total: f64 = power.iter().sum();
    let mean = power.iter().enumerate().map(|(i, p)| i as f64 * p).sum::<f64>() / total;
    let var = power.iter().enumerate().map(|(i, p)| (i as f64 - mean).powi(2) * p).sum::<f64>() / total;
    var.sqrt() / ((len as f64 - 1.0) / 2.0).max(0.5)
}

/// Mel-like initialization. Centers sit at the mel filter peaks. Each
/// Gabor's half-power width combines the matching triangle's base width in
/// quadrature with the analysis window's mainlobe width, which is the
/// effective resolution of a mel channel. Pooling defaults to the time
/// spread of the squared analysis window, and PCEN starts at the configured
/// values.
pub fn init_leaf(cfg: &FrontendConfig) -> LeafParams {
    let points = mel_points(cfg);
    let n = cfg.n_filters;
    let p = &cfg.pcen;
    let lobe = window_half_power_width(cfg.window, cfg.window_samples(), cfg.sample_rate as f64);
    let pool = cfg.pool_width.unwrap_or_else(|| window_spread(cfg.window, cfg.window_samples()));
    LeafParams {
        center_hz: points[1..=n].to_vec(),
        bandwidth: (0..n).map(|m| (points[m + 2] - points[m]).hypot(lobe)).collect(),
        pool_width: vec![pool; n],
        pcen: PcenParams::uniform(n, p.alpha, p.delta, p.root, p.smooth, p.eps),
    }
}

pub(crate) fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    ids: &LeafIds,
    cfg: &FrontendConfig,
    batch: &[&Waveform],
) -> Result<Var> {
    let signals: Vec<&[f64]> = batch.iter().map(|w| w.samples.as_slice()).collect();
    let vars = [ids.center_hz, ids.bandwidth, ids.pool_width, ids.alpha, ids.delta, ids.root].map(|id| tape.param(store, id));
    forward_vars(tape, &signals, vars, cfg)
}

/// The Gabor frontend on explicit vars, ordered center, bandwidth, pool
/// width, PCEN alpha, delta, root.
pub(crate) fn forward_vars(tape: &mut Tape, signals: &[&[f64]], vars: [Var; 6], cfg: &FrontendConfig) -> Result<Var> {
    let [center, bandwidth, pool, alpha, delta, root] = vars;
    let energy = gabor_pool(
        tape,
        signals,
        center,
        bandwidth,
        pool,
        cfg.gabor_len,
        cfg.window_samples(),
        cfg.hop_samples(),
        cfg.sample_rate as f64,
    )?;
    match cfg.compression {
        Compression::Log => Ok(tape.log_eps(energy, cfg.log_eps)?),
        Compression::Pcen => pcen(tape, energy, alpha, delta, root, cfg.pcen.smooth, cfg.pcen.eps),
    }
}

/// Clamps centers into the open band `(0, Nyquist)` and keeps widths, PCEN
/// exponents and offsets positive.
pub(crate) fn constrain(store: &mut ParamStore, ids: &LeafIds, cfg: &FrontendConfig) {
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let min_pool = 2.0 / cfg.window_samples() as f64;
    let clamp = |store: &mut ParamStore, id, lo: f64, hi: f64| {
        store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    };
    clamp(store, ids.center_hz, 1e-3, nyquist - 1e-3);
    clamp(store, ids.bandwidth, 1e-3, nyquist);
    clamp(store, ids.pool_width, min_pool, f64::MAX);
    clamp(store, ids.alpha, 0.0, f64::MAX);
    clamp(store, ids.delta, 1e-6, f64::MAX);
    clamp(store, ids.root, 1e-2, f64::MAX);
}

/// Features of one waveform under explicit parameter values.
pub fn leaf_frontend(w: &Waveform, p: &LeafParams, cfg: &FrontendConfig) -> Result<FeatureMap> {
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
        channel_center_hz: p.center_hz.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn init_centers_follow_mel_points() {
        let cfg = FrontendConfig::default();
        let p = init_leaf(&cfg);
        let points = mel_points(&cfg);
        assert!(p.center_hz.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(p.center_hz[0], points[1]);
        assert_eq!(*p.center_hz.last().unwrap(), points[cfg.n_filters]);
        assert!(p.bandwidth.iter().all(|&b| b > 0.0));
        // Hann mainlobe of a 120-sample window is about 1.44 bins of 33.3 Hz
        let lobe = window_half_power_width(WindowKind::Hann, 120, 4000.0);
        assert!((lobe - 48.0).abs() < 1.5, "{lobe}");
        assert!((p.pool_width[0] - 17.0 / 59.5).abs() < 0.01, "{}", p.pool_width[0]);
        assert_eq!(p.pcen.alpha, vec![2.0; 128]);
        assert_eq!(p.pcen.root, vec![4.0; 128]);
    }

    #[test]
    fn silence_gives_zero() {
        let cfg = FrontendConfig::default();
        let fm = leaf_frontend(&Waveform::new(vec![0.0; 8000], 4000, "z"), &init_leaf(&cfg), &cfg).unwrap();
        assert_eq!((fm.frames, fm.channels), (198, 128));
        assert!(fm.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_peaks_near_its_frequency() {
        let cfg = FrontendConfig {
            n_filters: 64,
            compression: Compression::Log,
            ..FrontendConfig::default()
        };
        let p = init_leaf(&cfg);
        let x = (0..8000).map(|i| (2.0 * PI * 500.0 * i as f64 / 4000.0).sin()).collect();
        let fm = leaf_frontend(&Waveform::new(x, 4000, "s"), &p, &cfg).unwrap();
        let row = fm.row(100);
        let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let points = mel_points(&cfg);
        assert!((p.center_hz[best] - 500.0).abs() <= points[best + 2] - points[best + 1]);
    }
}
