//! Confusion-matrix based classification metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{predictions} predictions for {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("class {class} outside [0, {classes})")]
    ClassOutOfRange { class: usize, classes: usize },
}

/// `counts[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

impl ConfusionMatrix {
    pub fn new(predictions: &[usize], golds: &[usize], classes: usize) -> Result<Self, MetricsError> {
        if predictions.len() != golds.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: predictions.len(),
                golds: golds.len(),
            });
        }
        let mut counts = vec![vec![0; classes]; classes];
        for (&p, &g) in predictions.iter().zip(golds) {
            for class in [p, g] {
                if class >= classes {
                    return Err(MetricsError::ClassOutOfRange { class, classes });
                }
            }
            counts[g][p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: usize = (0..self.classes).map(|c| self.counts[c][c]).sum();
        correct as f64 / total as f64
    }

    /// Precision, recall and F1 of one class; each is 0 when undefined.
    pub fn class_metrics(&self, class: usize) -> ClassMetrics {
        let tp = self.counts[class][class] as f64;
        let predicted: usize = (0..self.classes).map(|g| self.counts[g][class]).sum();
        let support: usize = self.counts[class].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support,
        }
    }

    pub fn per_class(&self) -> Vec<ClassMetrics> {
        (0..self.classes).map(|c| self.class_metrics(c)).collect()
    }
}
