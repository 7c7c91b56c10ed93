use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Classifier, ModelConfig, ModelError, Result, Standardization, TrainConfig};
use crate::frontends::{FrontendConfig, FrontendKind};

pub const SIDECAR_FORMAT: &str = "medfront-checkpoint v1";

/// Everything besides the parameter values needed to rebuild a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub frontend: FrontendKind,
    pub frontend_config: FrontendConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub input_samples: usize,
    pub standardization: Standardization,
    pub best_epoch: Option<usize>,
    /// Digest identifying the test partition the checkpoint belongs to.
    pub test_digest: Option<String>,
}

/// The JSON file stored next to a checkpoint (`model.mfck` → `model.json`).
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

impl Classifier {
    pub fn sidecar(&self, train: &TrainConfig, best_epoch: Option<usize>) -> Sidecar {
        Sidecar {
            format: SIDECAR_FORMAT.into(),
            frontend: self.frontend.kind(),
            frontend_config: self.frontend.config().clone(),
            model: self.model.config().clone(),
            train: train.clone(),
            input_samples: self.input_samples(),
            standardization: self.model.standardization().clone(),
            best_epoch,
            test_digest: None,
        }
    }

    /// Writes the parameters to `path` and `sidecar` next to it.
    pub fn save(&self, path: &Path, sidecar: &Sidecar) -> Result<()> {
        self.store.save(BufWriter::new(fs::File::create(path)?))?;
        let mut json = serde_json::to_string_pretty(sidecar)?;
        json.push('\n');
        fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    /// Rebuilds a classifier from a checkpoint and its sidecar.
    pub fn load(path: &Path) -> Result<(Self, Sidecar)> {
        let side_path = sidecar_path(path);
        let text = fs::read_to_string(&side_path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", side_path.display())))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        if sidecar.format != SIDECAR_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "{}: unsupported format `{}`",
                side_path.display(),
                sidecar.format
            )));
        }
        let mut clf = Classifier::new(
            sidecar.frontend,
            &sidecar.frontend_config,
            &sidecar.model,
            sidecar.input_samples,
            0,
        )?;
        clf.store.load(fs::File::open(path)?)?;
        clf.model.set_standardization(sidecar.standardization.clone())?;
        Ok((clf, sidecar))
    }
}
