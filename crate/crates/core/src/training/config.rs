use serde::{Deserialize, Serialize};

use crate::model::{ClassifierDepth, ModelDims, Variant};

use super::{AdadeltaParams, TrainError};

/// Hyperparameters for one training run. `Default` is the `sst` preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub views: usize,
    pub view_dim: usize,
    /// Rows of each attention transform; `None` means `view_dim`.
    pub attention_dim: Option<usize>,
    /// Classifier hidden width; `None` means `views * view_dim / 2`.
    pub hidden_dim: Option<usize>,
    pub embed_dim: usize,
    pub dropout: f64,
    pub lr_scale: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
    pub conv_features: bool,
    pub classifier: ClassifierDepth,
    pub min_count: usize,
    /// Number of classes; `None` infers `max label + 1` from the training set.
    pub classes: Option<usize>,
    pub max_malformed_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::sst()
    }
}

impl TrainConfig {
    /// Sentiment treebank setup: 8 views of 200 dimensions over 300-d
    /// embeddings, batch 50, dropout 0.2, Adadelta scaled by 0.0005.
    pub fn sst() -> Self {
        TrainConfig {
            views: 8,
            view_dim: 200,
            attention_dim: None,
            hidden_dim: None,
            embed_dim: 300,
            dropout: 0.2,
            lr_scale: 0.0005,
            rho: 0.95,
            epsilon: 1e-6,
            batch_size: 50,
            max_epochs: 20,
            patience: 3,
            seed: 1,
            variant: Variant::Full,
            conv_features: true,
            classifier: ClassifierDepth::TwoLayer,
            min_count: 1,
            classes: None,
            max_malformed_fraction: 0.01,
        }
    }

    /// News categorization setup: as `sst` but batch 23 and 100-d views.
    pub fn ag() -> Self {
        TrainConfig {
            batch_size: 23,
            view_dim: 100,
            ..TrainConfig::sst()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "sst" => Some(Self::sst()),
            "ag" => Some(Self::ag()),
            _ => None,
        }
    }

    pub fn resolved_attention_dim(&self) -> usize {
        self.attention_dim.unwrap_or(self.view_dim)
    }

    pub fn resolved_hidden_dim(&self) -> usize {
        self.hidden_dim.unwrap_or((self.views * self.view_dim / 2).max(1))
    }

    pub fn adadelta(&self) -> AdadeltaParams {
        AdadeltaParams {
            lr_scale: self.lr_scale,
            rho: self.rho,
            epsilon: self.epsilon,
        }
    }

    pub fn model_dims(&self, vocab_size: usize, classes: usize) -> ModelDims {
        ModelDims {
            vocab_size,
            embed_dim: self.embed_dim,
            view_dim: self.view_dim,
            attention_dim: self.resolved_attention_dim(),
            hidden_dim: self.resolved_hidden_dim(),
            views: self.views,
            classes,
            variant: self.variant,
            conv_features: self.conv_features,
            depth: self.classifier,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.views == 0 {
            return bad("views must be >= 1".into());
        }
        if self.view_dim == 0 || self.embed_dim == 0 {
            return bad("view_dim and embed_dim must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.rho) || self.epsilon <= 0.0 || self.lr_scale < 0.0 {
            return bad("adadelta needs rho in [0, 1), epsilon > 0, lr_scale >= 0".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_malformed_fraction) {
            return bad("max_malformed_fraction outside [0, 1]".into());
        }
        if self.classes == Some(0) || self.attention_dim == Some(0) || self.hidden_dim == Some(0) {
            return bad("classes, attention_dim and hidden_dim must be positive when set".into());
        }
        Ok(())
    }
}
