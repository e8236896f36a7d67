//! Diagnostics over trained networks: Gaussian Naive Bayes probes on each
//! view's vectors, accuracy as a function of view count, and voting
//! ensembles of single-view networks.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Example;
use crate::features::Vocabulary;
use crate::metrics::{ConfusionMatrix, MetricsError};
use crate::model::{forward, Mode, ModelError, MvnParameters, ViewBundle};
use crate::numeric::{argmax, Graph};
use crate::training::{evaluate, fit, init_parameters, TrainConfig, TrainError};

/// Relative variance floor: every class variance is at least this times the
/// largest per-feature variance over the whole training set.
pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("class {0} has no training examples")]
    MissingClass(usize),
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("expected {expected}-d input, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("view count must be >= 1")]
    ZeroViews,
    #[error("view {view} out of range for {views} views")]
    ViewOutOfRange { view: usize, views: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Eval-mode view vectors of every document.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewDataset {
    pub views: usize,
    pub dim: usize,
    pub records: Vec<ViewRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub views: Vec<Vec<f64>>,
    pub label: usize,
}

impl ViewDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The vectors of view `i` (0-based) and the labels.
    pub fn view(&self, i: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>), AnalysisError> {
        if i >= self.views {
            return Err(AnalysisError::ViewOutOfRange {
                view: i,
                views: self.views,
            });
        }
        Ok(self.records.iter().map(|r| (r.views[i].clone(), r.label)).unzip())
    }
}

pub fn extract_bundles(params: &MvnParameters, data: &[Example]) -> Result<Vec<ViewBundle>, AnalysisError> {
    data.iter()
        .map(|ex| {
            let mut g = Graph::with_params(&params.store);
            let out = forward(&mut g, params, &ex.ids, &Mode::Eval)?;
            Ok(ViewBundle::from_nodes(&g, &out.bundle))
        })
        .collect()
}

pub fn extract_view_representations(params: &MvnParameters, data: &[Example]) -> Result<ViewDataset, AnalysisError> {
    let bundles = extract_bundles(params, data)?;
    let records = bundles
        .into_iter()
        .zip(data)
        .map(|(b, ex)| ViewRecord {
            views: b.views,
            label: ex.label,
        })
        .collect();
    Ok(ViewDataset {
        views: params.dims.views,
        dim: params.dims.view_dim,
        records,
    })
}

/// Class-conditional independent Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub log_prior: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NbPrediction {
    pub class: usize,
    /// Normalized: `log p(c | x)`.
    pub log_posteriors: Vec<f64>,
}

fn mean_var<'a>(rows: impl Iterator<Item = &'a Vec<f64>> + Clone, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.clone().count() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(r) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Maximum-likelihood fit. Variances are floored at
/// `VARIANCE_FLOOR * max overall feature variance`, or at `VARIANCE_FLOOR`
/// itself when every feature is constant.
pub fn nb_train(features: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<GaussianNb, AnalysisError> {
    if features.is_empty() {
        return Err(AnalysisError::Empty("training set"));
    }
    if features.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: features.len(),
            golds: labels.len(),
        }
        .into());
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(AnalysisError::DimMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(AnalysisError::LabelOutOfRange { label, classes });
    }
    let (_, overall) = mean_var(features.iter(), dim);
    let max_var = overall.iter().copied().fold(0.0, f64::max);
    let floor = if max_var > 0.0 { VARIANCE_FLOOR * max_var } else { VARIANCE_FLOOR };

    let n = features.len() as f64;
    let mut model = GaussianNb {
        log_prior: Vec::with_capacity(classes),
        means: Vec::with_capacity(classes),
        variances: Vec::with_capacity(classes),
        floor,
    };
    for c in 0..classes {
        let rows = features.iter().zip(labels).filter(move |(_, &l)| l == c).map(|(f, _)| f);
        let count = rows.clone().count();
        if count == 0 {
            return Err(AnalysisError::MissingClass(c));
        }
        let (mean, mut var) = mean_var(rows, dim);
        var.iter_mut().for_each(|v| *v = v.max(floor));
        model.log_prior.push((count as f64 / n).ln());
        model.means.push(mean);
        model.variances.push(var);
    }
    Ok(model)
}

impl GaussianNb {
    pub fn classes(&self) -> usize {
        self.log_prior.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `log p(c) + sum_j log N(x_j; mean_cj, var_cj)` for every class.
    pub fn log_joint(&self, x: &[f64]) -> Result<Vec<f64>, AnalysisError> {
        if x.len() != self.dim() {
            return Err(AnalysisError::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok((0..self.classes())
            .map(|c| {
                let density: f64 = x
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.variances[c])
                    .map(|((x, m), v)| -0.5 * (2.0 * PI * v).ln() - (x - m) * (x - m) / (2.0 * v))
                    .sum();
                self.log_prior[c] + density
            })
            .collect())
    }
}

/// Arg-max class (lowest index on ties) with normalized log-posteriors.
pub fn nb_predict(model: &GaussianNb, x: &[f64]) -> Result<NbPrediction, AnalysisError> {
    let joint = model.log_joint(x)?;
    let max = joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + joint.iter().map(|j| (j - max).exp()).sum::<f64>().ln();
    Ok(NbPrediction {
        class: argmax(&joint),
        log_posteriors: joint.iter().map(|j| j - lse).collect(),
    })
}

/// Per-class F1, 0 where precision + recall is 0.
pub fn class_f_measures(predictions: &[usize], golds: &[usize], classes: usize) -> Result<Vec<f64>, AnalysisError> {
    let m = ConfusionMatrix::new(predictions, golds, classes)?;
    Ok(m.per_class().into_iter().map(|c| c.f1).collect())
}

/// Class F1 of a Naive Bayes probe per view: `f1[view][class]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewF1Matrix {
    pub f1: Vec<Vec<f64>>,
    pub accuracy: Vec<f64>,
}

impl ViewF1Matrix {
    pub fn to_csv(&self) -> String {
        let classes = self.f1.first().map_or(0, Vec::len);
        let mut out = String::from("view");
        for c in 0..classes {
            out.push_str(&format!(",class{c}_f1"));
        }
        out.push_str(",accuracy\n");
        for (i, (row, acc)) in self.f1.iter().zip(&self.accuracy).enumerate() {
            out.push_str(&(i + 1).to_string());
            for f in row {
                out.push_str(&format!(",{f}"));
            }
            out.push_str(&format!(",{acc}\n"));
        }
        out
    }
}

/// Fits one probe per view on `train` vectors and scores it on `test` vectors.
pub fn analyze_views(params: &MvnParameters, train: &[Example], test: &[Example]) -> Result<ViewF1Matrix, AnalysisError> {
    if test.is_empty() {
        return Err(AnalysisError::Empty("test set"));
    }
    let classes = params.dims.classes;
    let train_views = extract_view_representations(params, train)?;
    let test_views = extract_view_representations(params, test)?;
    let mut matrix = ViewF1Matrix {
        f1: Vec::with_capacity(train_views.views),
        accuracy: Vec::with_capacity(train_views.views),
    };
    for v in 0..train_views.views {
        let (x, y) = train_views.view(v)?;
        let nb = nb_train(&x, &y, classes)?;
        let (tx, ty) = test_views.view(v)?;
        let preds = tx
            .iter()
            .map(|x| nb_predict(&nb, x).map(|p| p.class))
            .collect::<Result<Vec<_>, _>>()?;
        let m = ConfusionMatrix::new(&preds, &ty, classes)?;
        matrix.f1.push(m.per_class().into_iter().map(|c| c.f1).collect());
        matrix.accuracy.push(m.accuracy());
    }
    Ok(matrix)
}

/// Training data shared by every run of a sweep or ensemble.
#[derive(Debug, Clone, Copy)]
pub struct Corpus<'a> {
    pub vocab: &'a Vocabulary,
    pub classes: usize,
    pub embeddings: Option<&'a Path>,
    pub train: &'a [Example],
    pub dev: &'a [Example],
    pub test: &'a [Example],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub views: usize,
    pub best_epoch: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("views,dev_acc,test_acc\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.views, r.dev_accuracy, r.test_accuracy));
    }
    out
}

/// One model per distinct view count, ascending, everything else equal.
pub fn view_sweep(base: &TrainConfig, views: &[usize], corpus: &Corpus<'_>) -> Result<Vec<SweepRow>, AnalysisError> {
    let mut counts = views.to_vec();
    if counts.contains(&0) {
        return Err(AnalysisError::ZeroViews);
    }
    if counts.is_empty() {
        return Err(AnalysisError::Empty("view list"));
    }
    counts.sort_unstable();
    counts.dedup();
    counts
        .into_iter()
        .map(|v| {
            let config = TrainConfig {
                views: v,
                ..base.clone()
            };
            let params = init_parameters(&config, corpus.vocab, corpus.classes, corpus.embeddings)?;
            let result = fit(params, corpus.train, corpus.dev, &config)?;
            let test = evaluate(&result.best, corpus.test)?;
            info!("views {v}: test accuracy {:.4}", test.accuracy);
            Ok(SweepRow {
                views: v,
                best_epoch: result.best_epoch,
                dev_accuracy: result.best_record().dev_accuracy,
                test_accuracy: test.accuracy,
            })
        })
        .collect()
}

/// Anything that maps a document to a class.
pub trait Predictor {
    fn predict_class(&self, ids: &[usize]) -> Result<usize, AnalysisError>;
}

impl Predictor for MvnParameters {
    fn predict_class(&self, ids: &[usize]) -> Result<usize, AnalysisError> {
        let mut g = Graph::with_params(&self.store);
        let out = forward(&mut g, self, ids, &Mode::Eval)?;
        Ok(argmax(g.value(out.logits).data()))
    }
}

impl<F: Fn(&[usize]) -> usize> Predictor for F {
    fn predict_class(&self, ids: &[usize]) -> Result<usize, AnalysisError> {
        Ok(self(ids))
    }
}

/// Most frequent class among `votes`; lowest class on ties.
pub fn majority_vote(votes: &[usize], classes: usize) -> Result<usize, AnalysisError> {
    if votes.is_empty() {
        return Err(AnalysisError::Empty("vote list"));
    }
    let mut counts = vec![0usize; classes];
    for &v in votes {
        if v >= classes {
            return Err(AnalysisError::LabelOutOfRange { label: v, classes });
        }
        counts[v] += 1;
    }
    let best = *counts.iter().max().expect("nonempty");
    Ok(counts.iter().position(|&c| c == best).expect("max exists"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub learner_accuracies: Vec<f64>,
}

impl EnsembleReport {
    pub fn learner_summary(&self) -> MeanStd {
        mean_stdev(&self.learner_accuracies)
    }
}

/// Equal-weight majority vote of `models`.
pub fn ensemble_vote<P: Predictor>(models: &[P], data: &[Example], classes: usize) -> Result<EnsembleReport, AnalysisError> {
    if models.is_empty() {
        return Err(AnalysisError::Empty("model list"));
    }
    if data.is_empty() {
        return Err(AnalysisError::Empty("dataset"));
    }
    let mut learner_correct = vec![0usize; models.len()];
    let mut predictions = Vec::with_capacity(data.len());
    let mut correct = 0;
    for ex in data {
        let votes = models
            .iter()
            .map(|m| m.predict_class(&ex.ids))
            .collect::<Result<Vec<_>, _>>()?;
        for (hit, &v) in learner_correct.iter_mut().zip(&votes) {
            *hit += usize::from(v == ex.label);
        }
        let class = majority_vote(&votes, classes)?;
        correct += usize::from(class == ex.label);
        predictions.push(class);
    }
    let n = data.len() as f64;
    Ok(EnsembleReport {
        accuracy: correct as f64 / n,
        predictions,
        learner_accuracies: learner_correct.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// `runs` single-view networks, learner `k` seeded with `seed + k`.
pub fn train_single_view_learners(
    base: &TrainConfig,
    runs: usize,
    corpus: &Corpus<'_>,
) -> Result<Vec<MvnParameters>, AnalysisError> {
    if runs == 0 {
        return Err(AnalysisError::Empty("learner list"));
    }
    (0..runs as u64)
        .map(|k| {
            let config = TrainConfig {
                views: 1,
                seed: base.seed.wrapping_add(k),
                ..base.clone()
            };
            let params = init_parameters(&config, corpus.vocab, corpus.classes, corpus.embeddings)?;
            Ok(fit(params, corpus.train, corpus.dev, &config)?.best)
        })
        .collect()
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub stdev: f64,
}

pub fn mean_stdev(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: 0.0, stdev: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stdev = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, stdev }
}

/// Percentages with two decimals, e.g. `49.50 ± 0.20`.
impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean * 100.0, self.stdev * 100.0)
    }
}

#[cfg(test)]
mod tests;
