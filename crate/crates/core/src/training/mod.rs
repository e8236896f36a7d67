//! Mini-batch Adadelta training with inverted dropout and dev-set model selection.

mod adadelta;
mod config;

pub use adadelta::{adadelta_step, AdadeltaParams, AdadeltaState};
pub use config::TrainConfig;

use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Example;
use crate::features::{load_embeddings, random_embeddings, FeatureError, Vocabulary};
use crate::metrics::{ClassMetrics, ConfusionMatrix, MetricsError};
use crate::model::{dropout_mask, forward, ModelError, Mode, MvnParameters};
use crate::numeric::{argmax, Graph, NumericError};
use crate::rng::{stream, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// Fresh parameters for `config`. The embedding table comes from
/// `pretrained` when given (uncovered rows random), else is fully random;
/// all draws come from the seed's init stream.
pub fn init_parameters(
    config: &TrainConfig,
    vocab: &Vocabulary,
    classes: usize,
    pretrained: Option<&Path>,
) -> Result<MvnParameters, TrainError> {
    config.validate()?;
    let mut rng = stream(config.seed, Stream::Init);
    let table = match pretrained {
        Some(path) => {
            let table = load_embeddings(path, vocab, &mut rng)?;
            if table.dim() != config.embed_dim {
                return Err(TrainError::Config(format!(
                    "embed_dim is {} but {} has {}-d vectors",
                    config.embed_dim,
                    path.display(),
                    table.dim()
                )));
            }
            info!("embeddings cover {} of {} vocabulary rows", table.covered, vocab.len());
            table
        }
        None => random_embeddings(vocab.len(), config.embed_dim, &mut rng),
    };
    Ok(MvnParameters::init(config.model_dims(vocab.len(), classes), table, &mut rng)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean per-example cross-entropy, as seen during the epoch (dropout on).
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Random streams consumed by training.
#[derive(Debug, Clone)]
pub struct TrainRngs {
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl TrainRngs {
    pub fn from_seed(seed: u64) -> Self {
        TrainRngs {
            shuffle: stream(seed, Stream::Shuffle),
            dropout: stream(seed, Stream::Dropout),
        }
    }
}

/// One pass over `data` in a seeded random order. Each mini-batch (the last
/// one may be short) is a single graph whose loss is the mean cross-entropy;
/// every example gets its own dropout mask.
pub fn train_epoch(
    params: &mut MvnParameters,
    state: &mut AdadeltaState,
    data: &[Example],
    config: &TrainConfig,
    rngs: &mut TrainRngs,
) -> Result<EpochStats, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rngs.shuffle);
    let concat_dim = params.dims.views * params.dims.view_dim;

    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for batch in order.chunks(config.batch_size) {
        let grads = {
            let mut g = Graph::with_params(&params.store);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let ex = &data[i];
                let mask = (config.dropout > 0.0).then(|| dropout_mask(concat_dim, config.dropout, &mut rngs.dropout));
                let out = forward(&mut g, params, &ex.ids, &Mode::Train { dropout_mask: mask })?;
                if argmax(g.value(out.logits).data()) == ex.label {
                    correct += 1;
                }
                let ce = g.cross_entropy(out.logits, ex.label)?;
                total_loss += g.value(ce).item();
                losses.push(ce);
            }
            let sum = g.add_n(&losses)?;
            let loss = g.scale(sum, 1.0 / batch.len() as f64)?;
            let node_grads = g.backward(loss)?;
            g.param_gradients(&node_grads)
        };
        adadelta_step(&mut params.store, &grads, state, config.adadelta())?;
    }
    Ok(EpochStats {
        mean_loss: total_loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Eval-mode predictions and metrics. Predictions take the arg-max logit,
/// lowest class on ties.
pub fn evaluate(params: &MvnParameters, data: &[Example]) -> Result<EvalReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    let mut predictions = Vec::with_capacity(data.len());
    let mut total_loss = 0.0;
    for ex in data {
        let mut g = Graph::with_params(&params.store);
        let out = forward(&mut g, params, &ex.ids, &Mode::Eval)?;
        predictions.push(argmax(g.value(out.logits).data()));
        let ce = g.cross_entropy(out.logits, ex.label)?;
        total_loss += g.value(ce).item();
    }
    let golds: Vec<usize> = data.iter().map(|e| e.label).collect();
    let confusion = ConfusionMatrix::new(&predictions, &golds, params.dims.classes)?;
    Ok(EvalReport {
        accuracy: confusion.accuracy(),
        mean_loss: total_loss / data.len() as f64,
        per_class: confusion.per_class(),
        confusion,
        predictions,
    })
}

/// One line of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters after the epoch with the best dev accuracy (ties: lower dev loss).
    pub best: MvnParameters,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
}

impl FitResult {
    pub fn best_record(&self) -> &EpochRecord {
        &self.curve[self.best_epoch - 1]
    }
}

/// Trains until `patience` epochs pass without dev improvement, or
/// `max_epochs` is reached. Epochs are numbered from 1.
pub fn fit(
    mut params: MvnParameters,
    train: &[Example],
    dev: &[Example],
    config: &TrainConfig,
) -> Result<FitResult, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyDataset("dev"));
    }
    let mut state = AdadeltaState::new(&params.store);
    let mut rngs = TrainRngs::from_seed(config.seed);
    let mut curve = Vec::new();
    let mut best: Option<(MvnParameters, usize)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let stats = train_epoch(&mut params, &mut state, train, config, &mut rngs)?;
        let report = evaluate(&params, dev)?;
        let record = EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            dev_loss: report.mean_loss,
            dev_accuracy: report.accuracy,
        };
        info!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | dev loss {:.4} acc {:.4}",
            stats.mean_loss, stats.accuracy, report.mean_loss, report.accuracy
        );
        let improved = match &best {
            None => true,
            Some((_, e)) => {
                let prev: &EpochRecord = &curve[*e - 1];
                record.dev_accuracy > prev.dev_accuracy
                    || (record.dev_accuracy == prev.dev_accuracy && record.dev_loss < prev.dev_loss)
            }
        };
        curve.push(record);
        if improved {
            best = Some((params.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }
    let (best, best_epoch) = best.expect("at least one epoch");
    Ok(FitResult { best, best_epoch, curve })
}
