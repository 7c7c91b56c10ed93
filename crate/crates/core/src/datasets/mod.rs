//! Corpus ingestion: WAV decoding, cycle annotations, segmentation,
//! preprocessing, seeded stratified splits and the manifest that records
//! them, plus a synthetic two-class corpus for offline use.

mod annotations;
mod labels;
mod manifest;
mod segment;
mod split;
mod synthetic;
mod wav;

pub use annotations::{parse_cycle_annotations, CycleAnnotation};
pub use labels::{icbhi_patient_id, parse_exclusions, parse_label_csv};
pub use manifest::{make_split, ManifestEntry, SegmentRef, SplitManifest, MANIFEST_HEADER};
pub use segment::{segment_by_cycles, segment_fixed, Preprocessor, Segment};
pub use split::{assign_partitions, class_counts, Fractions, SplitMode};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use wav::{parse_wav, write_wav};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("wav parse error at byte {offset}: {msg}")]
    Wav { offset: usize, msg: String },
    #[error("annotation line {line}: {msg}")]
    Annotation { line: usize, msg: String },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("split: {0}")]
    Split(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary class; abnormal is the positive class in every metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Normal, Label::Abnormal];

    /// Class index used for logits: normal 0, abnormal 1.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" => Ok(Label::Normal),
            "abnormal" => Ok(Label::Abnormal),
            other => Err(format!("unknown label `{other}` (expected normal or abnormal)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        })
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown partition `{other}`")),
        }
    }
}
