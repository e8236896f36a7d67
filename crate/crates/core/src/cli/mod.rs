//! Command-line layer: config files, run manifests and the `mvn` commands.

mod args;
mod commands;
mod config;
mod manifest;

pub use args::{Cli, CommandArgs, CommonArgs};
pub use commands::{
    cmd_ablate, cmd_analyze_views, cmd_eval, cmd_sweep_views, cmd_train, execute, AblationReport, AblationRow,
    EvalSummary, Inputs, LearnerSummary, RunRequest, TrainMetrics,
};
pub use config::{format_config, parse_config, parse_switch, read_config, KEYS};
pub use manifest::{replay, sha256_file, Command, InputRecord, RunManifest, MANIFEST_FILE};

use std::path::Path;

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::checkpoint::CheckpointError;
use crate::data::DataError;
use crate::features::FeatureError;
use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {msg}")]
    Config { file: String, line: usize, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: checksum {found} does not match manifest ({expected})")]
    ChecksumMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
