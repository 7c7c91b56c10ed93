use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, Result, Standardization};
use crate::autodiff::{softmax, AutodiffError, stream_rng, AdamConfig, AdamState, ParamId, ParamStore, Tape, Tensor, Var};
use crate::datasets::Label;
use crate::eval::{metrics, ConfusionCounts, Metrics};
use crate::frontends::{Frontend, FrontendConfig, FrontendError, FrontendKind};
use crate::signal::Waveform;

const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;
const PREDICT_BATCH: usize = 64;

pub const LOG_HEADER: &str = "epoch,train_loss,val_balanced_accuracy,val_tpr,val_tnr";

/// A labeled waveform ready for the frontend.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub waveform: Waveform,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub frontend: FrontendKind,
    /// Validation metrics are computed every this many epochs and after the last.
    pub eval_every: usize,
    /// Training stops once validation balanced accuracy reaches this value.
    pub target_val_ba: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 1e-5,
            seed: 0,
            frontend: FrontendKind::Mel,
            eval_every: 1,
            target_val_ba: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// Softmax probabilities indexed by [`Label::index`].
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn probability(&self) -> f64 {
        self.probabilities[self.label.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (best validation balanced accuracy).
    pub best_epoch: Option<usize>,
    pub best_val: Option<Metrics>,
    /// Optimizer steps taken over the whole run.
    pub steps: u64,
}

impl TrainReport {
    pub fn log_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for e in &self.log {
            match e.val {
                Some(m) => out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    e.epoch, e.train_loss, m.balanced_accuracy, m.tpr, m.tnr
                )),
                None => out.push_str(&format!("{},{},,,\n", e.epoch, e.train_loss)),
            }
        }
        out
    }
}

/// A frontend and a model sharing one parameter store.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub frontend: Frontend,
    pub model: Model,
    pub store: ParamStore,
    input_samples: usize,
}

impl Classifier {
    /// Builds a frontend of `kind` and a model sized for waveforms of
    /// `input_samples` samples.
    pub fn new(
        kind: FrontendKind,
        frontend_cfg: &FrontendConfig,
        model_cfg: &ModelConfig,
        input_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let frontend = Frontend::new(kind, frontend_cfg, &mut store)?;
        let frames = frontend_cfg.frames_for(input_samples)?;
        let model = Model::build(model_cfg, frames, frontend_cfg.n_filters, &mut store, seed)?;
        Ok(Self {
            frontend,
            model,
            store,
            input_samples,
        })
    }

    pub fn input_samples(&self) -> usize {
        self.input_samples
    }

    /// Frontend and model parameters updated by training.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        let mut ids = self.frontend.trainable_ids();
        ids.extend(self.model.param_ids());
        ids
    }

    fn check_lengths(&self, waves: &[&Waveform]) -> Result<()> {
        match waves.iter().find(|w| w.len() != self.input_samples) {
            Some(w) => Err(ModelError::InputShape {
                expected: self.model.plan().input,
                got: vec![w.len()],
            }),
            None => Ok(()),
        }
    }

    /// Frontend outputs at the current parameters, one `[frames, channels]`
    /// buffer per waveform.
    pub fn feature_maps(&self, waves: &[&Waveform]) -> Result<Vec<Vec<f64>>> {
        self.check_lengths(waves)?;
        let mut out = Vec::with_capacity(waves.len());
        for chunk in waves.chunks(PREDICT_BATCH) {
            let mut tape = Tape::new();
            let x = self.frontend.forward(&mut tape, &self.store, chunk)?;
            let per = tape.value(x).len() / chunk.len();
            out.extend(tape.value(x).data().chunks(per).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Fits the input standardization to the frontend's current outputs on `waves`.
    pub fn fit_standardization(&mut self, waves: &[&Waveform]) -> Result<()> {
        let maps = self.feature_maps(waves)?;
        self.fit_standardization_maps(&maps)
    }

    fn fit_standardization_maps(&mut self, maps: &[Vec<f64>]) -> Result<()> {
        let channels = self.model.plan().input.1;
        self.model
            .set_standardization(Standardization::fit(maps.iter().map(Vec::as_slice), channels))
    }

    fn stacked(&self, tape: &mut Tape, maps: &[&[f64]]) -> Result<Var> {
        let (frames, channels) = self.model.plan().input;
        let data: Vec<f64> = maps.iter().flat_map(|m| m.iter().copied()).collect();
        Ok(tape.constant(Tensor::new(vec![maps.len(), frames, channels], data)?))
    }

    fn predictions(&self, tape: &Tape, logits: Var) -> Vec<Prediction> {
        let k = self.model.config().num_classes;
        tape.value(logits)
            .data()
            .chunks(k)
            .map(|row| {
                let probabilities = softmax(row);
                let best = (0..k).fold(0, |b, i| if probabilities[i] > probabilities[b] { i } else { b });
                Prediction {
                    label: Label::from_index(best).unwrap_or(Label::Abnormal),
                    probabilities,
                }
            })
            .collect()
    }

    /// Eval-mode predictions (no dropout).
    pub fn predict(&self, waves: &[&Waveform]) -> Result<Vec<Prediction>> {
        self.check_lengths(waves)?;
        let mut rng = stream_rng(0, DROPOUT_STREAM);
        let mut out = Vec::with_capacity(waves.len());
        for chunk in waves.chunks(PREDICT_BATCH) {
            let mut tape = Tape::new();
            let x = self.frontend.forward(&mut tape, &self.store, chunk)?;
            let logits = self.model.forward(&mut tape, &self.store, x, false, &mut rng)?;
            out.extend(self.predictions(&tape, logits));
        }
        Ok(out)
    }

    /// Eval-mode predictions from precomputed frontend outputs.
    pub fn predict_maps(&self, maps: &[&[f64]]) -> Result<Vec<Prediction>> {
        let mut rng = stream_rng(0, DROPOUT_STREAM);
        let mut out = Vec::with_capacity(maps.len());
        for chunk in maps.chunks(PREDICT_BATCH) {
            let mut tape = Tape::new();
            let x = self.stacked(&mut tape, chunk)?;
            let logits = self.model.forward(&mut tape, &self.store, x, false, &mut rng)?;
            out.extend(self.predictions(&tape, logits));
        }
        Ok(out)
    }

    /// Balanced accuracy, TPR and TNR on `examples`.
    pub fn evaluate(&self, examples: &[Example]) -> Result<Metrics> {
        let waves: Vec<&Waveform> = examples.iter().map(|e| &e.waveform).collect();
        score(&self.predict(&waves)?, examples)
    }
}

fn score(pred: &[Prediction], examples: &[Example]) -> Result<Metrics> {
    let p: Vec<Label> = pred.iter().map(|p| p.label).collect();
    let t: Vec<Label> = examples.iter().map(|e| e.label).collect();
    Ok(metrics(ConfusionCounts::from_predictions(&p, &t)?)?)
}

/// Trains `clf` on `train`, selecting the parameters with the best validation
/// balanced accuracy.
///
/// Standardization statistics are fitted to the initial frontend's outputs
/// on `train`. Each epoch visits `train` in a seeded shuffled order in
/// batches of `tc.batch_size` and takes one Adam step per batch on the model
/// and, for learnable frontends, the frontend parameters. Outputs of the
/// fixed frontend are computed once and reused.
pub fn train(clf: &mut Classifier, train: &[Example], val: &[Example], tc: &TrainConfig) -> Result<TrainReport> {
    tc.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(ModelError::Config("training and validation sets must be non-empty".into()));
    }
    if tc.frontend != clf.frontend.kind() {
        return Err(ModelError::Config(format!(
            "train config names frontend {}, classifier has {}",
            tc.frontend.name(),
            clf.frontend.kind().name()
        )));
    }
    let learnable = clf.frontend.kind().is_learnable();
    let train_waves: Vec<&Waveform> = train.iter().map(|e| &e.waveform).collect();
    let val_waves: Vec<&Waveform> = val.iter().map(|e| &e.waveform).collect();
    clf.check_lengths(&val_waves)?;

    let train_maps = clf.feature_maps(&train_waves)?;
    clf.fit_standardization_maps(&train_maps)?;
    let train_cache = (!learnable).then_some(train_maps);
    let val_cache = if learnable { None } else { Some(clf.feature_maps(&val_waves)?) };

    let adam_cfg = AdamConfig {
        lr: tc.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, &clf.store, clf.trainable_ids());
    let mut shuffle_rng = stream_rng(tc.seed, SHUFFLE_STREAM);
    let mut dropout_rng = stream_rng(tc.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, Metrics, Vec<u8>)> = None;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(tc.batch_size).enumerate() {
            let non_finite = |op: &str| ModelError::NonFinite {
                epoch,
                batch,
                op: op.to_string(),
                segments: chunk.iter().map(|&i| train[i].id.clone()).collect(),
            };
            let mut tape = Tape::new();
            let mut forward = |tape: &mut Tape| -> Result<Var> {
                let x = match &train_cache {
                    Some(maps) => {
                        let refs: Vec<&[f64]> = chunk.iter().map(|&i| maps[i].as_slice()).collect();
                        clf.stacked(tape, &refs)?
                    }
                    None => {
                        let waves: Vec<&Waveform> = chunk.iter().map(|&i| train_waves[i]).collect();
                        clf.frontend.forward(tape, &clf.store, &waves)?
                    }
                };
                let logits = clf.model.forward(tape, &clf.store, x, true, &mut dropout_rng)?;
                let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label.index()).collect();
                Ok(tape.softmax_cross_entropy(logits, &labels)?)
            };
            let loss = match forward(&mut tape) {
                Ok(loss) => loss,
                Err(ModelError::Autodiff(AutodiffError::NonFinite(op))) => return Err(non_finite(op)),
                Err(ModelError::Frontend(FrontendError::Autodiff(AutodiffError::NonFinite(op)))) => {
                    return Err(non_finite(op))
                }
                Err(e) => return Err(e),
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(non_finite("loss"));
            }
            tape.backward(loss, &mut clf.store)?;
            adam.step(&mut clf.store)?;
            clf.frontend.constrain(&mut clf.store);
            loss_sum += value * chunk.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let val_metrics = if epoch % tc.eval_every == 0 || epoch == tc.epochs {
            let pred = match &val_cache {
                Some(maps) => clf.predict_maps(&maps.iter().map(Vec::as_slice).collect::<Vec<_>>())?,
                None => clf.predict(&val_waves)?,
            };
            Some(score(&pred, val)?)
        } else {
            None
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}{}",
            val_metrics.map_or(String::new(), |m| format!(", val balanced accuracy {:.4}", m.balanced_accuracy))
        );
        log.push(EpochLog {
            epoch,
            train_loss,
            val: val_metrics,
        });
        if let Some(m) = val_metrics {
            if best.as_ref().is_none_or(|b| m.balanced_accuracy > b.1.balanced_accuracy) {
                best = Some((epoch, m, clf.store.to_bytes()));
            }
            if tc.target_val_ba.is_some_and(|t| m.balanced_accuracy >= t) {
                break;
            }
        }
    }

    let (best_epoch, best_val) = match best {
        Some((epoch, m, bytes)) => {
            clf.store.load(bytes.as_slice())?;
            (Some(epoch), Some(m))
        }
        None => (None, None),
    };
    Ok(TrainReport {
        log,
        best_epoch,
        best_val,
        steps: adam.steps(),
    })
}
