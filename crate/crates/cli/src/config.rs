//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; some defaults depend on `dataset`. Relative paths are resolved
//! against the directory of the config file, and the echoed effective
//! configuration spells every key out with absolute paths so it can be
//! re-run from anywhere.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use medfront::datasets::{Fractions, SplitMode};
use medfront::frontends::{Compression, FrontendConfig, FrontendKind, PcenConfig};
use medfront::model::{Activation, Architecture, ConvBlock, ModelConfig, TrainConfig};
use medfront::signal::WindowKind;

use crate::CliError;

/// File name of the echoed configuration inside the output directory.
pub const EFFECTIVE_CONFIG: &str = "effective_config.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Respiratory,
    Heartbeat,
    Synthetic,
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "respiratory" => Ok(Self::Respiratory),
            "heartbeat" => Ok(Self::Heartbeat),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(format!("unknown dataset `{other}` (expected respiratory, heartbeat or synthetic)")),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Respiratory => "respiratory",
            Self::Heartbeat => "heartbeat",
            Self::Synthetic => "synthetic",
        })
    }
}

impl DatasetKind {
    /// Butterworth band-pass edges applied during preprocessing.
    pub fn band_hz(self) -> (f64, f64) {
        match self {
            Self::Respiratory | Self::Synthetic => (120.0, 1800.0),
            Self::Heartbeat => (25.0, 400.0),
        }
    }

    /// Frequency range spanned by the frontend filters.
    pub fn filter_range_hz(self) -> (f64, f64) {
        match self {
            Self::Respiratory | Self::Synthetic => (100.0, 2000.0),
            Self::Heartbeat => (25.0, 1000.0),
        }
    }

    pub fn epochs(self) -> usize {
        match self {
            Self::Respiratory => 200,
            Self::Heartbeat => 300,
            Self::Synthetic => 30,
        }
    }

    pub fn lr(self) -> f64 {
        match self {
            Self::Respiratory | Self::Heartbeat => 1e-5,
            Self::Synthetic => 1e-3,
        }
    }
}

/// Every accepted key with a one-line description, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "respiratory | heartbeat | synthetic (default synthetic)"),
    ("corpus_dir", "directory holding the corpus WAV files (and .txt cycle annotations for respiratory)"),
    ("labels_csv", "heartbeat only: `file,label` CSV with label normal or abnormal"),
    ("exclusions", "optional list of file names to skip, one per line"),
    ("output_dir", "directory for segments, manifest, checkpoints, logs and reports (default medfront-out)"),
    ("seed", "seed for synthetic data, splits, initialization, shuffling and dropout (default 0)"),
    ("band_low_hz", "band-pass lower edge (respiratory/synthetic 120, heartbeat 25)"),
    ("band_high_hz", "band-pass upper edge (respiratory/synthetic 1800, heartbeat 400)"),
    ("filter_order", "total Butterworth band-pass order (default 12)"),
    ("sample_rate", "target sample rate in Hz (default 4000)"),
    ("segment_s", "segment duration after padding or truncation, and heartbeat chunk length (default 2)"),
    ("synthetic_count", "number of synthetic recordings (default 1000)"),
    ("split_mode", "per_segment | patient_grouped (default per_segment)"),
    ("train_fraction", "default 0.75"),
    ("val_fraction", "default 0.15"),
    ("test_fraction", "default 0.10"),
    ("frontend", "mel | leaf | nnaudio (default mel)"),
    ("window_ms", "analysis window (default 30)"),
    ("hop_ms", "frame hop (default 10)"),
    ("n_filters", "filters per frontend (default 128)"),
    ("fmin_hz", "lowest filter frequency (respiratory/synthetic 100, heartbeat 25)"),
    ("fmax_hz", "highest filter frequency (respiratory/synthetic 2000, heartbeat 1000)"),
    ("compression", "log | pcen, Gabor frontend only (default pcen)"),
    ("window", "hann | hamming | rectangular (default hann)"),
    ("n_fft", "FFT size or auto (default auto: next power of two above the window)"),
    ("log_eps", "offset inside the log compression (default 1e-6)"),
    ("gabor_len", "Gabor kernel length in samples (default 401)"),
    ("pool_width", "initial Gaussian pooling width or auto (default auto)"),
    ("pcen_alpha", "default 2"),
    ("pcen_delta", "default 2"),
    ("pcen_root", "default 4"),
    ("pcen_smooth", "default 0.04"),
    ("pcen_eps", "default 1e-6"),
    ("architecture", "compact | vgg_style (default compact)"),
    ("conv_blocks", "comma-separated CHANNELSxKERNEL/POOL, e.g. 8x3/2,16x3/2 (default per architecture)"),
    ("dense_units", "comma-separated hidden dense widths (compact 32, vgg_style 4096,4096)"),
    ("dropout_p", "dropout before each of the last two dense layers (default 0.5)"),
    ("activation", "relu | swish (default relu)"),
    ("epochs", "respiratory 200, heartbeat 300, synthetic 30"),
    ("batch_size", "default 64"),
    ("lr", "Adam learning rate (respiratory/heartbeat 1e-5, synthetic 1e-3)"),
    ("eval_every", "validation cadence in epochs (default 1)"),
    ("target_val_ba", "stop once validation balanced accuracy reaches this value, or none (default none)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub corpus_dir: Option<PathBuf>,
    pub labels_csv: Option<PathBuf>,
    pub exclusions: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub band_hz: (f64, f64),
    pub filter_order: usize,
    pub segment_s: f64,
    pub synthetic_count: usize,
    pub split_mode: SplitMode,
    pub fractions: Fractions,
    pub frontend_kind: FrontendKind,
    pub frontend: FrontendConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some((line, raw)) => raw
                .parse()
                .map_err(|e| CliError::Config(format!("line {line}: `{key}`: {e}"))),
        }
    }

    /// `auto`/`none`/empty map to `None`.
    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            Some((line, raw)) if !matches!(raw.as_str(), "" | "auto" | "none") => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("line {line}: `{key}`: {e}"))),
            _ => Ok(None),
        }
    }

    fn path(&self, key: &str, base: &Path) -> Option<PathBuf> {
        self.values
            .get(key)
            .map(|(_, raw)| raw.trim())
            .filter(|raw| !raw.is_empty() && *raw != "none")
            .map(|raw| base.join(raw))
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.values.get(key).map(|(l, v)| (*l, v.as_str()))
    }
}

fn parse_blocks(raw: &str) -> Result<Vec<ConvBlock>, String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let err = || format!("conv block `{s}` is not CHANNELSxKERNEL/POOL");
            let (ck, pool) = s.split_once('/').ok_or_else(err)?;
            let (c, k) = ck.split_once('x').ok_or_else(err)?;
            Ok(ConvBlock::new(
                c.trim().parse().map_err(|_| err())?,
                k.trim().parse().map_err(|_| err())?,
                pool.trim().parse().map_err(|_| err())?,
            ))
        })
        .collect()
}

fn parse_units(raw: &str) -> Result<Vec<usize>, String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("dense width `{s}` is not a positive integer")))
        .collect()
}

impl RunConfig {
    /// Every default, with relative paths resolved against `base`.
    pub fn defaults(base: &Path) -> Self {
        Self::parse("", base).expect("defaults are valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(base).map_err(|e| CliError::Config(e.to_string()))?;
        Self::parse(&text, &base)
    }

    /// Parses config text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let n = i + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {n}: expected `key = value`, found `{line}`")))?;
            let key = key.trim();
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(CliError::Config(format!("line {n}: unknown key `{key}`")));
            }
            if values.insert(key.to_string(), (n, value.trim().to_string())).is_some() {
                return Err(CliError::Config(format!("line {n}: `{key}` is set twice")));
            }
        }
        let e = Entries { values };

        let dataset: DatasetKind = e.get("dataset", DatasetKind::Synthetic)?;
        let band = dataset.band_hz();
        let range = dataset.filter_range_hz();
        let seed: u64 = e.get("seed", 0)?;
        let frontend_kind: FrontendKind = e.get("frontend", FrontendKind::Mel)?;

        let pcen_default = PcenConfig::default();
        let fdef = FrontendConfig::default();
        let frontend = FrontendConfig {
            window_ms: e.get("window_ms", fdef.window_ms)?,
            hop_ms: e.get("hop_ms", fdef.hop_ms)?,
            n_filters: e.get("n_filters", fdef.n_filters)?,
            fmin_hz: e.get("fmin_hz", range.0)?,
            fmax_hz: e.get("fmax_hz", range.1)?,
            sample_rate: e.get("sample_rate", fdef.sample_rate)?,
            compression: e.get("compression", Compression::Pcen)?,
            window: e.get("window", WindowKind::Hann)?,
            n_fft: e.optional("n_fft")?,
            log_eps: e.get("log_eps", fdef.log_eps)?,
            gabor_len: e.get("gabor_len", fdef.gabor_len)?,
            pool_width: e.optional("pool_width")?,
            pcen: PcenConfig {
                alpha: e.get("pcen_alpha", pcen_default.alpha)?,
                delta: e.get("pcen_delta", pcen_default.delta)?,
                root: e.get("pcen_root", pcen_default.root)?,
                smooth: e.get("pcen_smooth", pcen_default.smooth)?,
                eps: e.get("pcen_eps", pcen_default.eps)?,
            },
        };
        frontend.validate().map_err(|err| CliError::Config(err.to_string()))?;

        let architecture: Architecture = e.get("architecture", Architecture::Compact)?;
        let mut model = ModelConfig::for_architecture(architecture);
        if let Some((n, raw)) = e.raw("conv_blocks") {
            model.conv_blocks = parse_blocks(raw).map_err(|m| CliError::Config(format!("line {n}: {m}")))?;
        }
        if let Some((n, raw)) = e.raw("dense_units") {
            model.dense_units = parse_units(raw).map_err(|m| CliError::Config(format!("line {n}: {m}")))?;
        }
        model.dropout_p = e.get("dropout_p", model.dropout_p)?;
        model.activation = e.get("activation", Activation::Relu)?;
        model.validate().map_err(|err| CliError::Config(err.to_string()))?;

        let train = TrainConfig {
            epochs: e.get("epochs", dataset.epochs())?,
            batch_size: e.get("batch_size", 64)?,
            lr: e.get("lr", dataset.lr())?,
            seed,
            frontend: frontend_kind,
            eval_every: e.get("eval_every", 1)?,
            target_val_ba: e.optional("target_val_ba")?,
        };
        train.validate().map_err(|err| CliError::Config(err.to_string()))?;

        let fractions = Fractions([
            e.get("train_fraction", 0.75)?,
            e.get("val_fraction", 0.15)?,
            e.get("test_fraction", 0.10)?,
        ]);
        fractions.validate().map_err(|err| CliError::Config(err.to_string()))?;

        let cfg = Self {
            dataset,
            corpus_dir: e.path("corpus_dir", base),
            labels_csv: e.path("labels_csv", base),
            exclusions: e.path("exclusions", base),
            output_dir: e.path("output_dir", base).unwrap_or_else(|| base.join("medfront-out")),
            seed,
            band_hz: (e.get("band_low_hz", band.0)?, e.get("band_high_hz", band.1)?),
            filter_order: e.get("filter_order", 12)?,
            segment_s: e.get("segment_s", 2.0)?,
            synthetic_count: e.get("synthetic_count", 1000)?,
            split_mode: e.get("split_mode", SplitMode::PerSegment)?,
            fractions,
            frontend_kind,
            frontend,
            model,
            train,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let (lo, hi) = self.band_hz;
        if !(0.0 < lo && lo < hi) {
            return bad(format!("band [{lo}, {hi}] Hz must satisfy 0 < low < high"));
        }
        if self.filter_order == 0 || !self.filter_order.is_multiple_of(2) {
            return bad(format!("filter_order {} must be a positive even number", self.filter_order));
        }
        if !(self.segment_s.is_finite() && self.segment_s > 0.0) {
            return bad(format!("segment_s {} must be positive", self.segment_s));
        }
        self.frontend
            .frames_for(self.input_samples())
            .map_err(|e| CliError::Config(format!("segment_s is too short for the analysis window: {e}")))?;
        if self.dataset == DatasetKind::Synthetic && self.synthetic_count < 10 {
            return bad("synthetic_count must be at least 10".into());
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> u32 {
        self.frontend.sample_rate
    }

    /// Samples per preprocessed segment.
    pub fn input_samples(&self) -> usize {
        (self.segment_s * self.sample_rate() as f64).round() as usize
    }

    /// Replaces the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    /// The effective configuration as parseable text listing every key.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let opt = |v: Option<String>, none: &str| v.unwrap_or_else(|| none.to_string());
        let f = &self.frontend;
        let blocks: Vec<String> = self
            .model
            .conv_blocks
            .iter()
            .map(|b| format!("{}x{}/{}", b.channels, b.kernel, b.pool))
            .collect();
        let units: Vec<String> = self.model.dense_units.iter().map(ToString::to_string).collect();
        let values: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.to_string()),
            ("corpus_dir", path(&self.corpus_dir)),
            ("labels_csv", path(&self.labels_csv)),
            ("exclusions", path(&self.exclusions)),
            ("output_dir", self.output_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("band_low_hz", self.band_hz.0.to_string()),
            ("band_high_hz", self.band_hz.1.to_string()),
            ("filter_order", self.filter_order.to_string()),
            ("sample_rate", f.sample_rate.to_string()),
            ("segment_s", self.segment_s.to_string()),
            ("synthetic_count", self.synthetic_count.to_string()),
            ("split_mode", self.split_mode.to_string()),
            ("train_fraction", self.fractions.0[0].to_string()),
            ("val_fraction", self.fractions.0[1].to_string()),
            ("test_fraction", self.fractions.0[2].to_string()),
            ("frontend", self.frontend_kind.to_string()),
            ("window_ms", f.window_ms.to_string()),
            ("hop_ms", f.hop_ms.to_string()),
            ("n_filters", f.n_filters.to_string()),
            ("fmin_hz", f.fmin_hz.to_string()),
            ("fmax_hz", f.fmax_hz.to_string()),
            ("compression", f.compression.to_string()),
            ("window", f.window.to_string()),
            ("n_fft", opt(f.n_fft.map(|n| n.to_string()), "auto")),
            ("log_eps", f.log_eps.to_string()),
            ("gabor_len", f.gabor_len.to_string()),
            ("pool_width", opt(f.pool_width.map(|w| w.to_string()), "auto")),
            ("pcen_alpha", f.pcen.alpha.to_string()),
            ("pcen_delta", f.pcen.delta.to_string()),
            ("pcen_root", f.pcen.root.to_string()),
            ("pcen_smooth", f.pcen.smooth.to_string()),
            ("pcen_eps", f.pcen.eps.to_string()),
            ("architecture", self.model.architecture.to_string()),
            ("conv_blocks", blocks.join(",")),
            ("dense_units", units.join(",")),
            ("dropout_p", self.model.dropout_p.to_string()),
            ("activation", self.model.activation.to_string()),
            ("epochs", self.train.epochs.to_string()),
            ("batch_size", self.train.batch_size.to_string()),
            ("lr", self.train.lr.to_string()),
            ("eval_every", self.train.eval_every.to_string()),
            ("target_val_ba", opt(self.train.target_val_ba.map(|v| v.to_string()), "none")),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut out = String::from("# medfront effective configuration\n");
        for (k, v) in values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
