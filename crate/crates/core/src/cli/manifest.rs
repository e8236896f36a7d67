//! Run manifests: what was run, on which bytes, producing which files.

use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::training::TrainConfig;

use super::commands::{execute, Inputs, RunRequest};
use super::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    Train,
    Eval,
    /// `runs` single-view learners vote; `None` uses the configured view count.
    Ablate { runs: Option<usize> },
    /// Empty means `1..=views`.
    SweepViews { views: Vec<usize> },
    AnalyzeViews,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Ablate { .. } => "ablate",
            Command::SweepViews { .. } => "sweep-views",
            Command::AnalyzeViews => "analyze-views",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    /// `train`, `dev`, `test`, `embeddings` or `checkpoint`.
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub command: Command,
    pub config: TrainConfig,
    pub seed: u64,
    pub inputs: Vec<InputRecord>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Files written, relative to `out_dir`. Includes the manifest itself.
    pub outputs: Vec<String>,
    pub out_dir: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    /// Starts a manifest, hashing every input before anything runs.
    pub(crate) fn begin(req: &RunRequest, config: &TrainConfig) -> Result<Self, CliError> {
        let inputs = req
            .inputs
            .named()
            .into_iter()
            .map(|(role, path)| {
                Ok(InputRecord {
                    role: role.to_string(),
                    sha256: sha256_file(path)?,
                    path: path.to_path_buf(),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(RunManifest {
            version: MANIFEST_VERSION,
            command: req.command.clone(),
            config: config.clone(),
            seed: config.seed,
            inputs,
            started_unix: unix_now(),
            finished_unix: 0,
            outputs: Vec::new(),
            out_dir: req.out.clone(),
        })
    }

    pub(crate) fn finish(mut self, mut outputs: Vec<String>) -> Result<Self, CliError> {
        self.finished_unix = unix_now();
        outputs.push(MANIFEST_FILE.to_string());
        self.outputs = outputs;
        let path = self.out_dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fails if any recorded input changed since the run.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for input in &self.inputs {
            let found = sha256_file(&input.path)?;
            if found != input.sha256 {
                return Err(CliError::ChecksumMismatch {
                    path: input.path.display().to_string(),
                    expected: input.sha256.clone(),
                    found,
                });
            }
        }
        Ok(())
    }

    /// The request that reproduces this run into `out`.
    pub fn request(&self, out: &Path) -> Result<RunRequest, CliError> {
        let mut inputs = Inputs::default();
        for input in &self.inputs {
            let slot = match input.role.as_str() {
                "train" => &mut inputs.train,
                "dev" => &mut inputs.dev,
                "test" => &mut inputs.test,
                "embeddings" => &mut inputs.embeddings,
                "checkpoint" => &mut inputs.checkpoint,
                other => return Err(CliError::Usage(format!("manifest has unknown input role {other:?}"))),
            };
            *slot = Some(input.path.clone());
        }
        Ok(RunRequest {
            command: self.command.clone(),
            config: self.config.clone(),
            inputs,
            out: out.to_path_buf(),
        })
    }
}

/// Re-runs the command recorded in `manifest` into `out`, after checking
/// that its inputs still hash to the recorded values.
pub fn replay(manifest: &Path, out: &Path) -> Result<RunManifest, CliError> {
    let m = RunManifest::load(manifest)?;
    m.verify_inputs()?;
    execute(&m.request(out)?)
}
