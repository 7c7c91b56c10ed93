//! CNN classifier over feature maps, trained jointly with the frontend.
//!
//! A feature map `[frames, channels]` is standardized per channel, treated as
//! a one-channel image and passed through conv blocks (same-padding
//! convolution, activation, optional max pooling), flattened, and classified
//! by dense layers. Dropout precedes each of the last two dense layers.

mod checkpoint;
mod train;

pub use checkpoint::{sidecar_path, Sidecar, SIDECAR_FORMAT};
pub use train::{train, Classifier, EpochLog, Example, Prediction, TrainConfig, TrainReport, LOG_HEADER};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{stream_rng, AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::datasets::DatasetError;
use crate::eval::EvalError;
use crate::frontends::FrontendError;

const INIT_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("a {h}x{w} map cannot pass block {block} (pool {pool})")]
    Sizing { block: usize, h: usize, w: usize, pool: usize },
    #[error("features are {got:?}, the model was built for {expected:?}")]
    InputShape { expected: (usize, usize), got: Vec<usize> },
    #[error("non-finite value from {op} in epoch {epoch}, batch {batch} (segments: {})", .segments.join(", "))]
    NonFinite {
        epoch: usize,
        batch: usize,
        op: String,
        segments: Vec<String>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Compact,
    VggStyle,
}

impl FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "compact" => Ok(Self::Compact),
            "vgg_style" => Ok(Self::VggStyle),
            other => Err(format!("unknown architecture `{other}` (expected compact or vgg_style)")),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Compact => "compact",
            Self::VggStyle => "vgg_style",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Swish,
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Self::Relu),
            "swish" => Ok(Self::Swish),
            other => Err(format!("unknown activation `{other}` (expected relu or swish)")),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Swish => "swish",
        })
    }
}

/// One convolution with `channels` square `kernel`s, followed by max pooling
/// with window and stride `pool` (1 disables pooling).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl ConvBlock {
    pub const fn new(channels: usize, kernel: usize, pool: usize) -> Self {
        Self { channels, kernel, pool }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub conv_blocks: Vec<ConvBlock>,
    /// Hidden dense widths; the output layer of `num_classes` units follows.
    pub dense_units: Vec<usize>,
    pub dropout_p: f64,
    pub activation: Activation,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::compact()
    }
}

impl ModelConfig {
    /// Two blocks (8 and 16 channels, 3×3, pool 2) and one hidden layer of 32.
    pub fn compact() -> Self {
        Self {
            architecture: Architecture::Compact,
            conv_blocks: vec![ConvBlock::new(8, 3, 2), ConvBlock::new(16, 3, 2)],
            dense_units: vec![32],
            dropout_p: 0.5,
            activation: Activation::Relu,
            num_classes: 2,
        }
    }

    /// Thirteen 3×3 convolutions in five groups (64, 128, 256, 512, 512
    /// channels), each group closed by 2×2 pooling, then two hidden layers of 4096.
    pub fn vgg_style() -> Self {
        let groups: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
        let conv_blocks = groups
            .iter()
            .flat_map(|&(ch, n)| (0..n).map(move |i| ConvBlock::new(ch, 3, if i + 1 == n { 2 } else { 1 })))
            .collect();
        Self {
            architecture: Architecture::VggStyle,
            conv_blocks,
            dense_units: vec![4096, 4096],
            dropout_p: 0.5,
            activation: Activation::Relu,
            num_classes: 2,
        }
    }

    /// Defaults for `architecture`.
    pub fn for_architecture(architecture: Architecture) -> Self {
        match architecture {
            Architecture::Compact => Self::compact(),
            Architecture::VggStyle => Self::vgg_style(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.conv_blocks.is_empty() {
            return bad("at least one conv block is required".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must be in [0, 1), got {}", self.dropout_p));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.channels == 0 || b.kernel == 0 || b.pool == 0 {
                return bad(format!("block {i}: channels, kernel and pool must be positive"));
            }
            if b.kernel % 2 == 0 {
                return bad(format!("block {i}: kernel {} must be odd for same padding", b.kernel));
            }
        }
        if self.dense_units.contains(&0) {
            return bad("dense widths must be positive".into());
        }
        Ok(())
    }

    /// Shape propagation for a `frames × channels` input.
    pub fn plan(&self, frames: usize, channels: usize) -> Result<ModelPlan> {
        self.validate()?;
        let (mut c, mut h, mut w) = (1, frames, channels);
        if h == 0 || w == 0 {
            return Err(ModelError::Sizing { block: 0, h, w, pool: 1 });
        }
        let mut conv_shapes = Vec::with_capacity(self.conv_blocks.len());
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if h < b.pool || w < b.pool {
                return Err(ModelError::Sizing {
                    block: i,
                    h,
                    w,
                    pool: b.pool,
                });
            }
            c = b.channels;
            h /= b.pool;
            w /= b.pool;
            conv_shapes.push([c, h, w]);
        }
        let flat = c * h * w;
        let mut widths = vec![flat];
        widths.extend(&self.dense_units);
        widths.push(self.num_classes);
        Ok(ModelPlan {
            input: (frames, channels),
            conv_shapes,
            dense: widths.windows(2).map(|w| (w[0], w[1])).collect(),
        })
    }
}

/// Layer shapes for one input size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelPlan {
    pub input: (usize, usize),
    /// `[channels, height, width]` after each conv block.
    pub conv_shapes: Vec<[usize; 3]>,
    /// `(in, out)` per dense layer, the output layer last.
    pub dense: Vec<(usize, usize)>,
}

impl ModelPlan {
    pub fn flat_features(&self) -> usize {
        self.dense[0].0
    }

    pub fn num_parameters(&self, cfg: &ModelConfig) -> usize {
        let mut cin = 1;
        let mut n = 0;
        for (b, s) in cfg.conv_blocks.iter().zip(&self.conv_shapes) {
            n += s[0] * cin * b.kernel * b.kernel + s[0];
            cin = s[0];
        }
        n + self.dense.iter().map(|&(i, o)| i * o + o).sum::<usize>()
    }
}

/// Per-channel input standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population statistics over every frame of `maps`, each laid out
    /// `[frames, channels]`. Constant channels keep a unit scale.
    pub fn fit<'a>(maps: impl IntoIterator<Item = &'a [f64]>, channels: usize) -> Self {
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut n = 0usize;
        for m in maps {
            for row in m.chunks(channels) {
                for (c, &x) in row.iter().enumerate() {
                    sum[c] += x;
                    sq[c] += x * x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(channels);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                if var.sqrt() > 1e-8 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    /// Applies the transform to `x [n, frames, channels]` on the tape.
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let channels = self.mean.len();
        let value = tape.value(x);
        let shape = value.shape().to_vec();
        let inv: Vec<f64> = self.std.iter().map(|s| 1.0 / s).collect();
        let out: Vec<f64> = value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % channels]) * inv[i % channels])
            .collect();
        Ok(tape.custom(
            "standardize",
            Tensor::new(shape, out)?,
            &[x],
            Box::new(move |g, _| vec![Some(g.iter().enumerate().map(|(i, g)| g * inv[i % channels]).collect())]),
        )?)
    }
}

/// A built network: parameter handles plus its plan and input standardization.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    plan: ModelPlan,
    conv: Vec<(ParamId, ParamId)>,
    dense: Vec<(ParamId, ParamId)>,
    standardization: Standardization,
}

fn he_normal(rng: &mut impl Rng, fan_in: usize, shape: &[usize]) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("shape matches data")
}

impl Model {
    /// Registers He-initialized weights, a zero output layer and zero biases
    /// for a `frames × channels` input. Parameters are named `model.conv{i}.*` and
    /// `model.dense{i}.*`.
    pub fn build(cfg: &ModelConfig, frames: usize, channels: usize, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let plan = cfg.plan(frames, channels)?;
        let mut rng = stream_rng(seed, INIT_STREAM);
        let mut cin = 1;
        let mut conv = Vec::with_capacity(cfg.conv_blocks.len());
        for (i, b) in cfg.conv_blocks.iter().enumerate() {
            let shape = [b.channels, cin, b.kernel, b.kernel];
            let w = store.add(format!("model.conv{i}.weight"), he_normal(&mut rng, cin * b.kernel * b.kernel, &shape));
            let bias = store.add(format!("model.conv{i}.bias"), Tensor::zeros(&[b.channels]));
            conv.push((w, bias));
            cin = b.channels;
        }
        let mut dense = Vec::with_capacity(plan.dense.len());
        for (i, &(fin, fout)) in plan.dense.iter().enumerate() {
            let value = if i + 1 == plan.dense.len() {
                Tensor::zeros(&[fin, fout])
            } else {
                he_normal(&mut rng, fin, &[fin, fout])
            };
            let w = store.add(format!("model.dense{i}.weight"), value);
            let b = store.add(format!("model.dense{i}.bias"), Tensor::zeros(&[fout]));
            dense.push((w, b));
        }
        Ok(Self {
            config: cfg.clone(),
            plan,
            conv,
            dense,
            standardization: Standardization::identity(channels),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &ModelPlan {
        &self.plan
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn set_standardization(&mut self, s: Standardization) -> Result<()> {
        let channels = self.plan.input.1;
        if s.mean.len() != channels || s.std.len() != channels {
            return Err(ModelError::Config(format!(
                "standardization has {} channels, the model expects {channels}",
                s.mean.len()
            )));
        }
        if s.std.iter().any(|&v| !(v.is_finite() && v > 0.0)) || s.mean.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Config("standardization statistics must be finite with positive std".into()));
        }
        self.standardization = s;
        Ok(())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.conv.iter().chain(&self.dense).flat_map(|&(w, b)| [w, b]).collect()
    }

    fn activate(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(match self.config.activation {
            Activation::Relu => tape.relu(x)?,
            Activation::Swish => tape.swish(x)?,
        })
    }

    /// Logits `[n, num_classes]` for features `[n, frames, channels]`.
    /// Dropout is active only when `train` is set.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: Var,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        let (frames, channels) = self.plan.input;
        if shape.len() != 3 || shape[1] != frames || shape[2] != channels {
            return Err(ModelError::InputShape {
                expected: self.plan.input,
                got: shape,
            });
        }
        let n = shape[0];
        let x = self.standardization.apply(tape, features)?;
        let mut x = tape.reshape(x, &[n, 1, frames, channels])?;
        for (b, &(w, bias)) in self.config.conv_blocks.iter().zip(&self.conv) {
            let (w, bias) = (tape.param(store, w), tape.param(store, bias));
            x = tape.conv2d(x, w, Some(bias), 1, b.kernel / 2)?;
            x = self.activate(tape, x)?;
            if b.pool > 1 {
                x = tape.max_pool2d(x, b.pool, b.pool)?;
            }
        }
        let mut x = tape.reshape(x, &[n, self.plan.flat_features()])?;
        let last = self.dense.len() - 1;
        for (i, &(w, b)) in self.dense.iter().enumerate() {
            if i + 2 > last {
                x = tape.dropout(x, self.config.dropout_p, train, rng)?;
            }
            let (w, b) = (tape.param(store, w), tape.param(store, b));
            x = tape.dense(x, w, b)?;
            if i < last {
                x = self.activate(tape, x)?;
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_plan_on_default_frame_grid() {
        let plan = ModelConfig::compact().plan(198, 128).unwrap();
        assert_eq!(plan.conv_shapes, vec![[8, 99, 64], [16, 49, 32]]);
        assert_eq!(plan.dense, vec![(16 * 49 * 32, 32), (32, 2)]);
    }

    #[test]
    fn vgg_plan_has_thirteen_convs_and_three_dense() {
        let cfg = ModelConfig::vgg_style();
        assert_eq!(cfg.conv_blocks.len(), 13);
        let plan = cfg.plan(198, 128).unwrap();
        assert_eq!(plan.conv_shapes.last().unwrap(), &[512, 6, 4]);
        assert_eq!(plan.dense, vec![(512 * 24, 4096), (4096, 4096), (4096, 2)]);
    }

    #[test]
    fn undersized_input_is_a_sizing_error() {
        let err = ModelConfig::vgg_style().plan(20, 20).unwrap_err();
        assert!(matches!(err, ModelError::Sizing { block: 12, h: 1, w: 1, pool: 2 }), "{err}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::compact();
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::compact();
        cfg.conv_blocks.clear();
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::compact();
        cfg.conv_blocks[0].kernel = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn standardization_statistics() {
        let a = [1.0, 10.0, 3.0, 10.0];
        let s = Standardization::fit([&a[..]], 2);
        assert_eq!(s.mean, vec![2.0, 10.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        let b = [0.0, 0.0, 4.0, 0.0];
        let s = Standardization::fit([&b[..]], 2);
        assert_eq!(s.std[0], 2.0);
    }
}
