use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    analyze_views, ensemble_vote, mean_stdev, sweep_csv, train_single_view_learners, view_sweep, Corpus, SweepRow,
    ViewF1Matrix,
};
use crate::checkpoint::Checkpoint;
use crate::data::{encode_documents, read_dataset, Example, LabeledDocument};
use crate::features::{build_vocab, Vocabulary};
use crate::metrics::ClassMetrics;
use crate::model::{Mvn, Variant};
use crate::training::{evaluate, fit, init_parameters, EvalReport, TrainConfig};

use super::manifest::{Command, RunManifest};
use super::CliError;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CURVE_FILE: &str = "curve.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TABLE: &str = "ablation.txt";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const VIEW_F1_JSON: &str = "view_f1.json";
pub const VIEW_F1_CSV: &str = "view_f1.csv";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Inputs {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Inputs {
    pub fn named(&self) -> Vec<(&'static str, &Path)> {
        [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
            ("embeddings", &self.embeddings),
            ("checkpoint", &self.checkpoint),
        ]
        .into_iter()
        .filter_map(|(role, p)| p.as_deref().map(|p| (role, p)))
        .collect()
    }

    fn require(&self, role: &str) -> Result<&Path, CliError> {
        self.named()
            .into_iter()
            .find(|(r, _)| *r == role)
            .map(|(_, p)| p)
            .ok_or_else(|| CliError::Usage(format!("--{role} is required for this command")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    pub command: Command,
    pub config: TrainConfig,
    pub inputs: Inputs,
    pub out: PathBuf,
}

fn write(out: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<String, CliError> {
    let path = out.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(name.to_string())
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Runs `req`, writing its outputs and a manifest into `req.out`.
pub fn execute(req: &RunRequest) -> Result<RunManifest, CliError> {
    fs::create_dir_all(&req.out).map_err(|e| CliError::io(&req.out, e))?;
    let config = match req.command {
        Command::Eval | Command::AnalyzeViews => Checkpoint::load(req.inputs.require("checkpoint")?)?.config,
        _ => req.config.clone(),
    };
    let manifest = RunManifest::begin(req, &config)?;
    info!("{} -> {}", req.command.name(), req.out.display());
    let outputs = match &req.command {
        Command::Train => cmd_train(&config, &req.inputs, &req.out)?.1,
        Command::Eval => {
            let data = req.inputs.test.as_deref().or(req.inputs.dev.as_deref());
            let data = data.ok_or_else(|| CliError::Usage("eval needs --test (or --dev)".into()))?;
            let (summary, outputs) = cmd_eval(req.inputs.require("checkpoint")?, data, &req.out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            outputs
        }
        Command::Ablate { runs } => {
            let (report, outputs) = cmd_ablate(&config, *runs, &req.inputs, &req.out)?;
            print!("{}", report.table());
            outputs
        }
        Command::SweepViews { views } => {
            let (rows, outputs) = cmd_sweep_views(&config, views, &req.inputs, &req.out)?;
            print!("{}", sweep_csv(&rows));
            outputs
        }
        Command::AnalyzeViews => {
            let (matrix, outputs) = cmd_analyze_views(
                req.inputs.require("checkpoint")?,
                req.inputs.require("train")?,
                req.inputs.require("test")?,
                &req.out,
            )?;
            print!("{}", matrix.to_csv());
            outputs
        }
    };
    manifest.finish(outputs)
}

struct Prepared {
    vocab: Vocabulary,
    classes: usize,
    train: Vec<Example>,
    dev: Vec<Example>,
    test: Option<Vec<Example>>,
}

impl Prepared {
    fn corpus<'a>(&'a self, inputs: &'a Inputs) -> Corpus<'a> {
        Corpus {
            vocab: &self.vocab,
            classes: self.classes,
            embeddings: inputs.embeddings.as_deref(),
            train: &self.train,
            dev: &self.dev,
            test: self.test.as_deref().unwrap_or(&[]),
        }
    }
}

fn read_docs(path: &Path, config: &TrainConfig) -> Result<Vec<LabeledDocument>, CliError> {
    let (docs, report) = read_dataset(path, config.max_malformed_fraction)?;
    if !report.malformed.is_empty() {
        info!(
            "{}: skipped {} malformed of {} lines",
            path.display(),
            report.malformed.len(),
            report.lines
        );
    }
    Ok(docs)
}

fn encode(docs: &[LabeledDocument], vocab: &Vocabulary, classes: usize, path: &Path) -> Result<Vec<Example>, CliError> {
    Ok(encode_documents(docs, vocab, classes, &path.display().to_string())?)
}

/// Reads the splits, builds the vocabulary from the training documents and
/// fixes the class count (configured, else `max train label + 1`).
fn prepare(config: &TrainConfig, inputs: &Inputs, need_test: bool) -> Result<Prepared, CliError> {
    let train_path = inputs.require("train")?;
    let dev_path = inputs.require("dev")?;
    let test_path = if need_test { Some(inputs.require("test")?) } else { inputs.test.as_deref() };

    let train_docs = read_docs(train_path, config)?;
    let vocab = build_vocab(&train_docs.iter().map(|d| d.tokens.clone()).collect::<Vec<_>>(), config.min_count)?;
    let classes = config
        .classes
        .unwrap_or_else(|| train_docs.iter().map(|d| d.label).max().map_or(1, |m| m + 1));
    let train = encode(&train_docs, &vocab, classes, train_path)?;
    let dev = encode(&read_docs(dev_path, config)?, &vocab, classes, dev_path)?;
    let test = match test_path {
        Some(p) => Some(encode(&read_docs(p, config)?, &vocab, classes, p)?),
        None => None,
    };
    info!(
        "vocabulary {} tokens, {} classes, {}/{}/{} documents",
        vocab.len(),
        classes,
        train.len(),
        dev.len(),
        test.as_ref().map_or(0, Vec::len)
    );
    Ok(Prepared {
        vocab,
        classes,
        train,
        dev,
        test,
    })
}

/// Accuracy, error rate (percent), loss, per-class scores and confusion counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub examples: usize,
    pub accuracy: f64,
    pub error_rate: f64,
    pub mean_loss: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl From<EvalReport> for EvalSummary {
    fn from(r: EvalReport) -> Self {
        EvalSummary {
            examples: r.predictions.len(),
            accuracy: r.accuracy,
            error_rate: 100.0 - 100.0 * r.accuracy,
            mean_loss: r.mean_loss,
            per_class: r.per_class,
            confusion: r.confusion.counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub vocab_size: usize,
    pub classes: usize,
    pub view_stack_params: usize,
    pub dev: EvalSummary,
    pub test: Option<EvalSummary>,
}

/// Trains one model; writes the best checkpoint, the per-epoch curve and
/// dev (plus test, when given) metrics.
pub fn cmd_train(config: &TrainConfig, inputs: &Inputs, out: &Path) -> Result<(TrainMetrics, Vec<String>), CliError> {
    let data = prepare(config, inputs, false)?;
    let params = init_parameters(config, &data.vocab, data.classes, inputs.embeddings.as_deref())?;
    let result = fit(params, &data.train, &data.dev, config)?;

    let mut curve = String::new();
    for record in &result.curve {
        curve.push_str(&serde_json::to_string(record)?);
        curve.push('\n');
    }
    let metrics = TrainMetrics {
        best_epoch: result.best_epoch,
        epochs_run: result.curve.len(),
        vocab_size: data.vocab.len(),
        classes: data.classes,
        view_stack_params: result.best.view_stack_params(),
        dev: evaluate(&result.best, &data.dev)?.into(),
        test: match &data.test {
            Some(test) => Some(evaluate(&result.best, test)?.into()),
            None => None,
        },
    };
    let checkpoint = Checkpoint {
        config: config.clone(),
        model: Mvn {
            vocab: data.vocab,
            params: result.best,
        },
    };
    let ckpt_path = out.join(CHECKPOINT_FILE);
    checkpoint.save(&ckpt_path)?;
    let outputs = vec![
        CHECKPOINT_FILE.to_string(),
        write(out, CURVE_FILE, curve)?,
        write(out, METRICS_FILE, json(&metrics)?)?,
    ];
    Ok((metrics, outputs))
}

/// Scores a checkpoint on one dataset. Labels outside the checkpoint's
/// class range are an error.
pub fn cmd_eval(checkpoint: &Path, data: &Path, out: &Path) -> Result<(EvalSummary, Vec<String>), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let docs = read_docs(data, &ck.config)?;
    let examples = encode(&docs, &ck.model.vocab, ck.model.classes(), data)?;
    let summary: EvalSummary = evaluate(&ck.model.params, &examples)?.into();
    let outputs = vec![write(out, METRICS_FILE, json(&summary)?)?];
    Ok((summary, outputs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSummary {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub stdev: f64,
    /// `mean ± stdev` in percent.
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub test_accuracy: f64,
    pub dev_accuracy: Option<f64>,
    pub view_stack_params: usize,
    pub learners: Option<LearnerSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Fixed-width table, accuracies in percent.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:>9}  {}\n", "model", "test_acc", "notes");
        for r in &self.rows {
            let notes = match &r.learners {
                Some(l) => format!("{} learners, each {}", l.accuracies.len(), l.display),
                None => format!("view-stack params {}", r.view_stack_params),
            };
            out.push_str(&format!("{:<10} {:>9.2}  {}\n", r.name, r.test_accuracy * 100.0, notes));
        }
        out
    }
}

/// Full, voting ensemble of single-view networks, no links, chain links;
/// every model sees the same data and seed.
pub fn cmd_ablate(
    config: &TrainConfig,
    runs: Option<usize>,
    inputs: &Inputs,
    out: &Path,
) -> Result<(AblationReport, Vec<String>), CliError> {
    let data = prepare(config, inputs, true)?;
    let corpus = data.corpus(inputs);
    let variant_row = |variant: Variant, name: &str| -> Result<AblationRow, CliError> {
        let cfg = TrainConfig {
            variant,
            ..config.clone()
        };
        let params = init_parameters(&cfg, corpus.vocab, corpus.classes, corpus.embeddings)?;
        let result = fit(params, corpus.train, corpus.dev, &cfg)?;
        let test = evaluate(&result.best, corpus.test)?;
        info!("{name}: test accuracy {:.4}", test.accuracy);
        Ok(AblationRow {
            name: name.to_string(),
            test_accuracy: test.accuracy,
            dev_accuracy: Some(result.best_record().dev_accuracy),
            view_stack_params: result.best.view_stack_params(),
            learners: None,
        })
    };

    let full = variant_row(Variant::Full, "full")?;
    let runs = runs.unwrap_or(config.views);
    let learners = train_single_view_learners(config, runs, &corpus)?;
    let vote = ensemble_vote(&learners, corpus.test, corpus.classes)?;
    let spread = mean_stdev(&vote.learner_accuracies);
    info!("ensemble of {runs}: test accuracy {:.4}", vote.accuracy);
    let ensemble = AblationRow {
        name: "ensemble".into(),
        test_accuracy: vote.accuracy,
        dev_accuracy: None,
        view_stack_params: 0,
        learners: Some(LearnerSummary {
            accuracies: vote.learner_accuracies.clone(),
            mean: spread.mean,
            stdev: spread.stdev,
            display: spread.to_string(),
        }),
    };
    let no_links = variant_row(Variant::NoLinks, "no_links")?;
    let chain = variant_row(Variant::Chain, "chain")?;

    let report = AblationReport {
        rows: vec![full, ensemble, no_links, chain],
    };
    let outputs = vec![
        write(out, ABLATION_JSON, json(&report)?)?,
        write(out, ABLATION_TABLE, report.table())?,
    ];
    Ok((report, outputs))
}

/// Trains one model per view count; an empty list means `1..=config.views`.
pub fn cmd_sweep_views(
    config: &TrainConfig,
    views: &[usize],
    inputs: &Inputs,
    out: &Path,
) -> Result<(Vec<SweepRow>, Vec<String>), CliError> {
    let data = prepare(config, inputs, true)?;
    let views: Vec<usize> = if views.is_empty() { (1..=config.views).collect() } else { views.to_vec() };
    let rows = view_sweep(config, &views, &data.corpus(inputs))?;
    let outputs = vec![
        write(out, SWEEP_CSV, sweep_csv(&rows))?,
        write(out, SWEEP_JSON, json(&rows)?)?,
    ];
    Ok((rows, outputs))
}

/// Naive Bayes probe per view of a trained checkpoint: F1 matrix, views by classes.
pub fn cmd_analyze_views(
    checkpoint: &Path,
    train: &Path,
    test: &Path,
    out: &Path,
) -> Result<(ViewF1Matrix, Vec<String>), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let classes = ck.model.classes();
    let train_ex = encode(&read_docs(train, &ck.config)?, &ck.model.vocab, classes, train)?;
    let test_ex = encode(&read_docs(test, &ck.config)?, &ck.model.vocab, classes, test)?;
    let matrix = analyze_views(&ck.model.params, &train_ex, &test_ex)?;
    let outputs = vec![
        write(out, VIEW_F1_JSON, json(&matrix)?)?,
        write(out, VIEW_F1_CSV, matrix.to_csv())?,
    ];
    Ok((matrix, outputs))
}
