//! The three waveform-to-feature transforms: a fixed log-mel filterbank, a
//! Gabor filterbank with Gaussian pooling and PCEN, and a learnable STFT
//! followed by a learnable mel projection.
//!
//! Learnable parameters live in a [`ParamStore`] so they can be trained
//! jointly with the classifier. Every frontend maps a 2 s waveform at the
//! configured rate to a `frames x n_filters` [`FeatureMap`], with identical
//! frame counts across frontends.

mod gabor;
mod io;
mod leaf;
mod mel;
mod nnaudio;
mod pcen;

pub use gabor::{gabor_kernel, gabor_pool, pool_window};
pub use io::{read_feature_dump, write_feature_dump, write_pgm, FEATURE_MAGIC, FEATURE_VERSION};
pub use leaf::{init_leaf, leaf_frontend, LeafParams};
pub use mel::{hz_to_mel, mel_filterbank_matrix, mel_frontend, mel_points, mel_to_hz, MelFilterbank};
pub use nnaudio::{init_nnaudio, nnaudio_frontend, NnAudioParams};
pub use pcen::{pcen, pcen_values, PcenParams};

pub(crate) use leaf::forward_vars as leaf_forward_vars;
pub(crate) use nnaudio::project as nnaudio_project;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::signal::{frame_count, ms_to_samples, SignalError, Waveform, WindowKind};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("invalid frontend configuration: {0}")]
    Config(String),
    #[error("waveform is at {actual} Hz but the frontend expects {expected} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error("batch mixes waveform lengths {0} and {1}")]
    RaggedBatch(usize, usize),
    #[error("feature dump: {0}")]
    Format(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FrontendError>;

/// Dynamic-range compression applied by the Gabor frontend. The fixed mel
/// and learnable STFT frontends always use `ln(x + log_eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    Log,
    Pcen,
}

impl fmt::Display for Compression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Log => "log",
            Self::Pcen => "pcen",
        })
    }
}

impl FromStr for Compression {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "log" => Ok(Self::Log),
            "pcen" => Ok(Self::Pcen),
            other => Err(format!("unknown compression `{other}` (expected log or pcen)")),
        }
    }
}

/// Initial PCEN values and the fixed smoother/floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcenConfig {
    pub alpha: f64,
    pub delta: f64,
    pub root: f64,
    /// Smoothing coefficient `s` of `M_t = (1 - s) M_{t-1} + s E_t`.
    pub smooth: f64,
    pub eps: f64,
}

impl Default for PcenConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            delta: 2.0,
            root: 4.0,
            smooth: 0.04,
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_filters: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub sample_rate: u32,
    pub compression: Compression,
    pub window: WindowKind,
    /// FFT size for the STFT-based frontends; defaults to the next power of
    /// two at or above the window length.
    pub n_fft: Option<usize>,
    pub log_eps: f64,
    /// Gabor kernel length in samples (odd keeps the kernel centered).
    pub gabor_len: usize,
    /// Initial Gaussian pooling width, relative to half the analysis window;
    /// defaults to the time spread of the squared analysis window.
    pub pool_width: Option<f64>,
    pub pcen: PcenConfig,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            window_ms: 30.0,
            hop_ms: 10.0,
            n_filters: 128,
            fmin_hz: 100.0,
            fmax_hz: 2000.0,
            sample_rate: 4000,
            compression: Compression::Pcen,
            window: WindowKind::Hann,
            n_fft: None,
            log_eps: 1e-6,
            gabor_len: 401,
            pool_width: None,
            pcen: PcenConfig::default(),
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FrontendError::Config(msg));
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !(0.0 <= self.fmin_hz && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {nyquist} Hz, got [{}, {}]",
                self.fmin_hz, self.fmax_hz
            ));
        }
        if self.n_filters == 0 {
            return bad("n_filters must be at least 1".into());
        }
        if self.window_samples() == 0 || self.hop_samples() == 0 {
            return bad(format!(
                "window {} ms / hop {} ms is below one sample at {} Hz",
                self.window_ms, self.hop_ms, self.sample_rate
            ));
        }
        if let Some(n) = self.n_fft {
            if !n.is_power_of_two() || n < self.window_samples() {
                return bad(format!(
                    "n_fft {n} must be a power of two no shorter than the {}-sample window",
                    self.window_samples()
                ));
            }
        }
        if self.gabor_len == 0 {
            return bad("gabor_len must be positive".into());
        }
        // Written so that NaN fails every check.
        let positive = |x: f64| x > 0.0;
        if !positive(self.log_eps) || self.pool_width.is_some_and(|w| !positive(w)) {
            return bad("log_eps and pool_width must be positive".into());
        }
        let p = &self.pcen;
        if !(p.smooth > 0.0 && p.smooth <= 1.0) || !positive(p.eps) || !positive(p.root) || p.delta < 0.0 {
            return bad(format!("invalid PCEN settings {p:?}"));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        ms_to_samples(self.window_ms, self.sample_rate)
    }

    pub fn hop_samples(&self) -> usize {
        ms_to_samples(self.hop_ms, self.sample_rate)
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft.unwrap_or_else(|| self.window_samples().next_power_of_two())
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop_samples() as f64
    }

    /// Frames produced for an input of `len` samples, shared by all frontends.
    pub fn frames_for(&self, len: usize) -> Result<usize> {
        frame_count(len, self.window_samples(), self.hop_samples()).ok_or(FrontendError::Signal(
            SignalError::TooShort {
                len,
                window: self.window_samples(),
            },
        ))
    }

    pub(crate) fn check_input(&self, w: &Waveform) -> Result<()> {
        if w.sample_rate != self.sample_rate {
            return Err(FrontendError::RateMismatch {
                expected: self.sample_rate,
                actual: w.sample_rate,
            });
        }
        self.frames_for(w.len()).map(|_| ())
    }
}

/// Time x channel output of a frontend, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Vec<f64>,
    pub frames: usize,
    pub channels: usize,
    pub frame_rate: f64,
    pub channel_center_hz: Vec<f64>,
}

impl FeatureMap {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.channels..(frame + 1) * self.channels]
    }

    pub fn get(&self, frame: usize, channel: usize) -> f64 {
        self.data[frame * self.channels + channel]
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.get(t, channel)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontendKind {
    Mel,
    Leaf,
    NnAudio,
}

impl FrontendKind {
    pub const ALL: [FrontendKind; 3] = [Self::Mel, Self::Leaf, Self::NnAudio];

    /// Tag byte used in feature dumps.
    pub fn tag(self) -> u8 {
        match self {
            Self::Mel => 0,
            Self::Leaf => 1,
            Self::NnAudio => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mel => "mel",
            Self::Leaf => "leaf",
            Self::NnAudio => "nnaudio",
        }
    }

    pub fn is_learnable(self) -> bool {
        self != Self::Mel
    }
}

impl fmt::Display for FrontendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FrontendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown frontend `{s}` (expected mel, leaf or nnaudio)"))
    }
}

/// Parameter handles of the Gabor frontend inside a [`ParamStore`].
#[derive(Debug, Clone, Copy)]
pub struct LeafIds {
    pub center_hz: ParamId,
    pub bandwidth: ParamId,
    pub pool_width: ParamId,
    pub alpha: ParamId,
    pub delta: ParamId,
    pub root: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct NnAudioIds {
    pub cos: ParamId,
    pub sin: ParamId,
    pub mel: ParamId,
}

#[derive(Debug, Clone)]
enum Inner {
    Mel(MelFilterbank),
    Leaf(LeafIds),
    NnAudio(NnAudioIds),
}

/// A frontend bound to its parameters in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Frontend {
    kind: FrontendKind,
    cfg: FrontendConfig,
    center_hz: Vec<f64>,
    inner: Inner,
}

impl Frontend {
    /// Builds `kind` at its initialization and registers its parameters in
    /// `store` under names prefixed with the frontend name. The fixed mel
    /// frontend registers nothing.
    pub fn new(kind: FrontendKind, cfg: &FrontendConfig, store: &mut ParamStore) -> Result<Self> {
        cfg.validate()?;
        let inner = match kind {
            FrontendKind::Mel => Inner::Mel(mel_filterbank_matrix(cfg, cfg.n_fft())),
            FrontendKind::Leaf => Inner::Leaf(init_leaf(cfg).register(store)?),
            FrontendKind::NnAudio => Inner::NnAudio(init_nnaudio(cfg, cfg.n_fft()).register(store)?),
        };
        Ok(Self {
            kind,
            cfg: cfg.clone(),
            center_hz: mel_points(cfg)[1..=cfg.n_filters].to_vec(),
            inner,
        })
    }

    pub fn kind(&self) -> FrontendKind {
        self.kind
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.inner {
            Inner::Mel(_) => Vec::new(),
            Inner::Leaf(ids) => vec![ids.center_hz, ids.bandwidth, ids.pool_width, ids.alpha, ids.delta, ids.root],
            Inner::NnAudio(ids) => vec![ids.cos, ids.sin, ids.mel],
        }
    }

    /// Parameters that receive gradients: all of [`Frontend::param_ids`]
    /// except the PCEN parameters of a log-compressed Gabor frontend.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        match &self.inner {
            Inner::Leaf(ids) if self.cfg.compression == Compression::Log => {
                vec![ids.center_hz, ids.bandwidth, ids.pool_width]
            }
            _ => self.param_ids(),
        }
    }

    pub fn leaf_ids(&self) -> Option<LeafIds> {
        match self.inner {
            Inner::Leaf(ids) => Some(ids),
            _ => None,
        }
    }

    pub fn nnaudio_ids(&self) -> Option<NnAudioIds> {
        match self.inner {
            Inner::NnAudio(ids) => Some(ids),
            _ => None,
        }
    }

    /// Records the frontend on `tape` for a batch of equal-length waveforms,
    /// producing `[batch, frames, n_filters]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &[&Waveform]) -> Result<Var> {
        let Some(first) = batch.first() else {
            return Err(FrontendError::Config("empty batch".into()));
        };
        for w in batch {
            self.cfg.check_input(w)?;
            if w.len() != first.len() {
                return Err(FrontendError::RaggedBatch(first.len(), w.len()));
            }
        }
        match &self.inner {
            Inner::Mel(fb) => {
                let maps = batch
                    .iter()
                    .map(|w| mel::mel_features(w, &self.cfg, fb))
                    .collect::<Result<Vec<_>>>()?;
                Ok(tape.constant(stack_maps(&maps)?))
            }
            Inner::Leaf(ids) => leaf::forward(tape, store, ids, &self.cfg, batch),
            Inner::NnAudio(ids) => nnaudio::forward(tape, store, ids, &self.cfg, batch),
        }
    }

    /// Features of one waveform at the current parameter values.
    pub fn extract(&self, store: &ParamStore, w: &Waveform) -> Result<FeatureMap> {
        if let Inner::Mel(fb) = &self.inner {
            return mel::mel_features(w, &self.cfg, fb);
        }
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, &[w])?;
        let value = tape.value(out);
        let (frames, channels) = (value.shape()[1], value.shape()[2]);
        Ok(FeatureMap {
            data: value.data().to_vec(),
            frames,
            channels,
            frame_rate: self.cfg.frame_rate(),
            channel_center_hz: self.channel_center_hz(store),
        })
    }

    /// Nominal center frequency per channel: the learned centers for the
    /// Gabor frontend, the mel peaks otherwise.
    pub fn channel_center_hz(&self, store: &ParamStore) -> Vec<f64> {
        match &self.inner {
            Inner::Leaf(ids) => store.value(ids.center_hz).data().to_vec(),
            _ => self.center_hz.clone(),
        }
    }

    /// Projects parameters back into their valid ranges after an optimizer step.
    pub fn constrain(&self, store: &mut ParamStore) {
        if let Inner::Leaf(ids) = &self.inner {
            leaf::constrain(store, ids, &self.cfg);
        }
    }
}

pub(crate) fn stack_maps(maps: &[FeatureMap]) -> Result<Tensor> {
    let (frames, channels) = (maps[0].frames, maps[0].channels);
    let mut data = Vec::with_capacity(maps.len() * frames * channels);
    for m in maps {
        data.extend_from_slice(&m.data);
    }
    Ok(Tensor::new(vec![maps.len(), frames, channels], data)?)
}
