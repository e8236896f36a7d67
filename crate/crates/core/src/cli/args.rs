use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::model::Variant;
use crate::synthetic::SyntheticSpec;
use crate::training::TrainConfig;

use super::commands::{execute, Inputs, RunRequest};
use super::config::{format_config, parse_config, parse_switch, read_config};
use super::manifest::{replay, Command, RunManifest};
use super::CliError;

#[derive(Debug, Parser)]
#[command(name = "mvn", version, about = "Multi-view network text classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Train a model and save the best-dev checkpoint.
    Train(CommonArgs),
    /// Score a checkpoint on --test (or --dev).
    Eval(CommonArgs),
    /// Full vs. single-view voting ensemble vs. no links vs. chain links.
    Ablate(CommonArgs),
    /// Accuracy as a function of the number of views (`--views 1,2,4,8`).
    SweepViews(CommonArgs),
    /// Per-view Naive Bayes class F1 for a checkpoint.
    AnalyzeViews(CommonArgs),
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a keyword-signal corpus (train/dev/test .tsv).
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Print the resolved config in file format.
    ShowConfig(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in hyperparameters: sst or ag. Ignored keys fall back to sst.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// GloVe-format text vectors.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// View count, or a comma-separated list for sweep-views.
    #[arg(long)]
    pub views: Option<String>,
    /// full, no-links or chain.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// on or off.
    #[arg(long, value_parser = parse_switch)]
    pub conv_features: Option<bool>,
    /// Single-view learners in the ablation ensemble.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

fn parse_view_list(text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("bad view count {v:?} in --views")))
        })
        .collect()
}

impl CommonArgs {
    /// Config file or preset, then `--set` overrides, then the dedicated flags.
    pub fn resolve_config(&self, views_is_list: bool) -> Result<TrainConfig, CliError> {
        let mut text = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => return Err(CliError::Usage("use either --config or --preset".into())),
            (Some(path), None) => format_config(&read_config(path)?),
            (None, Some(preset)) => format!("preset = {preset}\n"),
            (None, None) => String::new(),
        };
        for o in &self.overrides {
            text.push_str(o);
            text.push('\n');
        }
        // Later keys must win, so re-parse through a map of the last value per key.
        let mut config = parse_config(&dedup_last(&text), "--config/--set")?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let (Some(views), false) = (&self.views, views_is_list) {
            config.views = views
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("--views expects one number here, got {views:?}")))?;
        }
        if let Some(v) = self.variant {
            config.variant = v;
        }
        if let Some(c) = self.conv_features {
            config.conv_features = c;
        }
        config.validate()?;
        Ok(config)
    }

    fn inputs(&self) -> Inputs {
        Inputs {
            train: self.train.clone(),
            dev: self.dev.clone(),
            test: self.test.clone(),
            embeddings: self.embeddings.clone(),
            checkpoint: self.checkpoint.clone(),
        }
    }

    pub fn request(&self, command: Command) -> Result<RunRequest, CliError> {
        let is_sweep = matches!(command, Command::SweepViews { .. });
        Ok(RunRequest {
            config: self.resolve_config(is_sweep)?,
            command,
            inputs: self.inputs(),
            out: self.out.clone(),
        })
    }
}

/// Keeps the last line for each key, in first-seen order.
fn dedup_last(text: &str) -> String {
    let mut lines: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let key = line.split('#').next().unwrap_or("").split('=').next().unwrap_or("").trim().to_string();
        if key.is_empty() {
            continue;
        }
        match lines.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = line.to_string(),
            None => lines.push((key, line.to_string())),
        }
    }
    lines.into_iter().map(|(_, l)| l + "\n").collect()
}

impl Cli {
    pub fn run(self) -> Result<Option<RunManifest>, CliError> {
        let (args, command) = match self.command {
            CommandArgs::Train(a) => (a, Command::Train),
            CommandArgs::Eval(a) => (a, Command::Eval),
            CommandArgs::Ablate(a) => {
                let runs = a.runs;
                (a, Command::Ablate { runs })
            }
            CommandArgs::SweepViews(a) => {
                let views = a.views.as_deref().map(parse_view_list).transpose()?.unwrap_or_default();
                (a, Command::SweepViews { views })
            }
            CommandArgs::AnalyzeViews(a) => (a, Command::AnalyzeViews),
            CommandArgs::Replay { manifest, out } => return replay(&manifest, &out).map(Some),
            CommandArgs::MakeSynthetic { out, seed } => {
                let spec = SyntheticSpec {
                    seed,
                    ..SyntheticSpec::default()
                };
                spec.generate().write(&out).map_err(|e| CliError::io(&out, e))?;
                println!("wrote {}/{{train,dev,test}}.tsv", out.display());
                return Ok(None);
            }
            CommandArgs::ShowConfig(a) => {
                print!("{}", format_config(&a.resolve_config(false)?));
                return Ok(None);
            }
        };
        execute(&args.request(command)?).map(Some)
    }
}
