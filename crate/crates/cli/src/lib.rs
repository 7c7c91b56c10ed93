//! Command-line driver: `medfront preprocess|extract|train|eval|compare`.
//!
//! Each subcommand is a stage that reads and writes files under the
//! configured output directory, so stages can be rerun independently.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use medfront::datasets::DatasetError;
use medfront::eval::format_percent;
use medfront::frontends::{FrontendError, FrontendKind};
use medfront::model::ModelError;
use thiserror::Error;

pub use config::{DatasetKind, RunConfig, EFFECTIVE_CONFIG, KEYS};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    /// 1 usage or config error, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } => Self::Numeric(e.to_string()),
            ModelError::Config(_) | ModelError::Sizing { .. } => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<FrontendError> for CliError {
    fn from(e: FrontendError) -> Self {
        match e {
            FrontendError::Config(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "medfront", version, about = "Compare fixed and learnable audio frontends on medical sounds")]
pub struct Cli {
    /// Run configuration (flat `key = value` file).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for preprocessing and feature extraction.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment, filter, resample and pad the corpus; write segments and the split manifest.
    Preprocess,
    /// Write feature dumps and PGM images for segments.
    Extract {
        /// Segment WAV (absolute, or relative to the output directory); repeatable.
        #[arg(long = "segment", required = true)]
        segments: Vec<PathBuf>,
        /// Frontends to render; defaults to the configured frontend.
        #[arg(long = "frontend")]
        frontends: Vec<FrontendKind>,
        /// Checkpoints supplying learned frontend parameters; repeatable.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Train the configured frontend and classifier.
    Train {
        /// Checkpoint path (default `<output_dir>/checkpoints/<frontend>.mfck`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test partition.
    Eval {
        /// Checkpoint path (default `<output_dir>/checkpoints/<frontend>.mfck`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// McNemar/Holm comparison of three checkpoints ordered mel, leaf, nnaudio.
    Compare {
        /// Defaults to `<output_dir>/checkpoints/{mel,leaf,nnaudio}.mfck`.
        #[arg(long, num_args = 3)]
        checkpoints: Option<Vec<PathBuf>>,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::defaults(&std::env::current_dir().map_err(|e| CliError::Config(e.to_string()))?),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    commands::echo_config(&cfg)?;
    match &cli.command {
        Command::Preprocess => commands::preprocess(&cfg, &pool).map(|_| ()),
        Command::Extract {
            segments,
            frontends,
            checkpoints,
        } => commands::extract(&cfg, &pool, segments, frontends, checkpoints).map(|_| ()),
        Command::Train { checkpoint } => {
            let summary = commands::train(&cfg, &pool, checkpoint.as_deref())?;
            if let (Some(e), Some(m)) = (summary.report.best_epoch, summary.report.best_val) {
                println!(
                    "best epoch {e}: validation balanced accuracy {}%, TPR {}%, TNR {}%",
                    format_percent(m.balanced_accuracy),
                    format_percent(m.tpr),
                    format_percent(m.tnr)
                );
            }
            println!("checkpoint written to {}", summary.checkpoint.display());
            Ok(())
        }
        Command::Eval { checkpoint } => {
            let summary = commands::eval(&cfg, &pool, checkpoint.as_deref())?;
            print!("{}", commands::metrics_table(&[(summary.frontend.to_string(), summary.metrics)]));
            Ok(())
        }
        Command::Compare { checkpoints } => {
            let summary = commands::compare(&cfg, &pool, checkpoints.as_deref())?;
            let rows: Vec<_> = summary.evals.iter().map(|e| (e.frontend.to_string(), e.metrics)).collect();
            print!("{}", commands::metrics_table(&rows));
            println!("\n{}", summary.report);
            Ok(())
        }
    }
}
