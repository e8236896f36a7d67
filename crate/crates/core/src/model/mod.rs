//! The multi-view network: per-view attention over the feature matrix,
//! view composition with horizontal links, and the classifier head.

mod views;

pub use views::{
    attention_scores, attention_weights, classify, compose_views, select, view_stack_param_count, Classifier, Dense,
    SelectionHead, ViewStack,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    augment_features, ngram_features, project, ConvFilter, ConvFilterBank, EmbeddingTable, Projection, Vocabulary,
    NGRAM_ORDERS,
};
use crate::numeric::{argmax, Graph, NodeId, NumericError, ParamId, ParamStore, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("document has no tokens")]
    EmptyDocument,
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter {0} missing")]
    MissingParam(String),
    #[error("unexpected parameter {0}")]
    ExtraParam(String),
    #[error("invalid model dimensions: {0}")]
    Dims(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// How interior views consume earlier views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `v_i = tanh(W_i [v_1; ...; v_{i-1}; s_i])`
    Full,
    /// `v_i = s_i`
    NoLinks,
    /// `v_i = tanh(W_i [v_{i-1}; s_i])`
    Chain,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoLinks, Variant::Chain];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoLinks => "no-links",
            Variant::Chain => "chain",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "no-links" | "no_links" | "nolinks" => Ok(Variant::NoLinks),
            "chain" => Ok(Variant::Chain),
            other => Err(format!("unknown variant {other:?} (full|no-links|chain)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierDepth {
    TwoLayer,
    Single,
}

impl fmt::Display for ClassifierDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierDepth::TwoLayer => "two-layer",
            ClassifierDepth::Single => "single",
        })
    }
}

impl FromStr for ClassifierDepth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two-layer" | "two_layer" | "2" => Ok(ClassifierDepth::TwoLayer),
            "single" | "1" => Ok(ClassifierDepth::Single),
            other => Err(format!("unknown classifier depth {other:?} (two-layer|single)")),
        }
    }
}

/// Everything needed to lay out the parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub view_dim: usize,
    pub attention_dim: usize,
    pub hidden_dim: usize,
    pub views: usize,
    pub classes: usize,
    pub variant: Variant,
    pub conv_features: bool,
    pub depth: ClassifierDepth,
    pub dropout: f64,
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("view_dim", self.view_dim),
            ("attention_dim", self.attention_dim),
            ("views", self.views),
            ("classes", self.classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Dims(format!("{name} must be positive")));
            }
        }
        if self.depth == ClassifierDepth::TwoLayer && self.hidden_dim == 0 {
            return Err(ModelError::Dims("hidden_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Dims(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Embedding,
    Xavier,
    Zero,
}

/// Names, shapes and initializers of every parameter, in storage order.
fn param_specs(dims: &ModelDims) -> Vec<(String, Vec<usize>, Init)> {
    let d = dims.view_dim;
    let a = dims.attention_dim;
    let mut specs = vec![
        ("embedding".to_string(), vec![dims.vocab_size, dims.embed_dim], Init::Embedding),
        ("projection.weight".into(), vec![dims.embed_dim, d], Init::Xavier),
        ("projection.bias".into(), vec![d], Init::Zero),
    ];
    if dims.conv_features {
        for n in NGRAM_ORDERS {
            specs.push((format!("conv{n}.weight"), vec![d, n * d], Init::Xavier));
            specs.push((format!("conv{n}.bias"), vec![d], Init::Zero));
        }
    }
    for i in 1..=dims.views {
        specs.push((format!("view{i}.select.w_s"), vec![a], Init::Xavier));
        specs.push((format!("view{i}.select.W"), vec![a, d], Init::Xavier));
    }
    for i in 2..dims.views {
        match dims.variant {
            Variant::Full => specs.push((format!("view{i}.stack.W"), vec![d, i * d], Init::Xavier)),
            Variant::Chain => specs.push((format!("view{i}.stack.W"), vec![d, 2 * d], Init::Xavier)),
            Variant::NoLinks => {}
        }
    }
    let concat = dims.views * d;
    let out_in = match dims.depth {
        ClassifierDepth::TwoLayer => {
            specs.push(("classifier.hidden.weight".into(), vec![dims.hidden_dim, concat], Init::Xavier));
            specs.push(("classifier.hidden.bias".into(), vec![dims.hidden_dim], Init::Zero));
            dims.hidden_dim
        }
        ClassifierDepth::Single => concat,
    };
    specs.push(("classifier.output.weight".into(), vec![dims.classes, out_in], Init::Xavier));
    specs.push(("classifier.output.bias".into(), vec![dims.classes], Init::Zero));
    specs
}

/// Typed handles into the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub embedding: ParamId,
    pub projection: Projection,
    pub conv: Option<ConvFilterBank>,
    pub heads: Vec<SelectionHead>,
    pub stack: ViewStack,
    pub classifier: Classifier,
}

impl Layout {
    fn resolve(dims: &ModelDims, store: &ParamStore) -> Result<Self, ModelError> {
        let id = |name: &str| store.find(name).ok_or_else(|| ModelError::MissingParam(name.to_string()));
        let conv = if dims.conv_features {
            let mut filters = Vec::with_capacity(4);
            for n in NGRAM_ORDERS {
                filters.push(ConvFilter {
                    order: n,
                    weight: id(&format!("conv{n}.weight"))?,
                    bias: id(&format!("conv{n}.bias"))?,
                });
            }
            Some(ConvFilterBank {
                filters: filters.try_into().expect("four filters"),
            })
        } else {
            None
        };
        let heads = (1..=dims.views)
            .map(|i| {
                Ok(SelectionHead {
                    w_s: id(&format!("view{i}.select.w_s"))?,
                    w: id(&format!("view{i}.select.W"))?,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let matrices = match dims.variant {
            Variant::NoLinks => Vec::new(),
            _ => (2..dims.views)
                .map(|i| id(&format!("view{i}.stack.W")))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let hidden = match dims.depth {
            ClassifierDepth::TwoLayer => Some(Dense {
                weight: id("classifier.hidden.weight")?,
                bias: id("classifier.hidden.bias")?,
            }),
            ClassifierDepth::Single => None,
        };
        Ok(Layout {
            embedding: id("embedding")?,
            projection: Projection {
                weight: id("projection.weight")?,
                bias: id("projection.bias")?,
            },
            conv,
            heads,
            stack: ViewStack {
                variant: dims.variant,
                matrices,
            },
            classifier: Classifier {
                hidden,
                output: Dense {
                    weight: id("classifier.output.weight")?,
                    bias: id("classifier.output.bias")?,
                },
                dropout: dims.dropout,
            },
        })
    }
}

/// All learnable tensors of a network together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnParameters {
    pub dims: ModelDims,
    pub store: ParamStore,
    pub layout: Layout,
}

impl MvnParameters {
    /// Weight matrices are uniform in `[-r, r]`, `r = sqrt(6 / (fan_in + fan_out))`;
    /// biases start at zero; the embedding table is taken as given.
    pub fn init<R: Rng>(dims: ModelDims, embeddings: EmbeddingTable, rng: &mut R) -> Result<Self, ModelError> {
        dims.validate()?;
        let mut store = ParamStore::new();
        let mut embeddings = Some(embeddings);
        for (name, shape, init) in param_specs(&dims) {
            let tensor = match init {
                Init::Embedding => {
                    let table = embeddings.take().expect("single embedding table").matrix;
                    if table.shape() != shape.as_slice() {
                        return Err(ModelError::ParamShape {
                            name,
                            expected: shape,
                            found: table.shape().to_vec(),
                        });
                    }
                    table
                }
                Init::Zero => Tensor::zeros(&shape),
                Init::Xavier => {
                    let (fan_out, fan_in) = if shape.len() == 1 { (1, shape[0]) } else { (shape[0], shape[1]) };
                    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-r..=r)).collect();
                    Tensor::new(shape, data)?
                }
            };
            store.add(name, tensor);
        }
        let layout = Layout::resolve(&dims, &store)?;
        Ok(MvnParameters { dims, store, layout })
    }

    /// Adopts an existing store after checking every name and shape.
    pub fn from_store(dims: ModelDims, store: ParamStore) -> Result<Self, ModelError> {
        dims.validate()?;
        let specs = param_specs(&dims);
        for (name, shape, _) in &specs {
            let id = store.find(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: store.get(id).shape().to_vec(),
                });
            }
        }
        if let Some((extra, _)) = store.iter().find(|(n, _)| !specs.iter().any(|(s, _, _)| s == n)) {
            return Err(ModelError::ExtraParam(extra.to_string()));
        }
        let layout = Layout::resolve(&dims, &store)?;
        Ok(MvnParameters { dims, store, layout })
    }

    pub fn view_stack_params(&self) -> usize {
        self.layout.stack.matrices.iter().map(|&id| self.store.get(id).len()).sum()
    }
}

/// Graph nodes of one document's views.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleNodes {
    pub attention: Vec<NodeId>,
    pub selections: Vec<NodeId>,
    pub views: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardNodes {
    pub features: NodeId,
    pub logits: NodeId,
    pub bundle: BundleNodes,
}

/// Eval runs deterministically; Train carries the dropout mask applied to
/// the concatenated views (`None` when dropout is off).
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Eval,
    Train { dropout_mask: Option<Tensor> },
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Tensor::vector((0..len).map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 }).collect())
}

/// Embed, project, optionally append n-gram rows, attend once per view,
/// compose the views and classify.
pub fn forward(g: &mut Graph<'_>, params: &MvnParameters, ids: &[usize], mode: &Mode) -> Result<ForwardNodes, ModelError> {
    if ids.is_empty() {
        return Err(ModelError::EmptyDocument);
    }
    let layout = &params.layout;
    let table = g.param(layout.embedding);
    let rows = g.gather(table, ids)?;
    let projected = project(g, rows, &layout.projection)?;
    let features = match &layout.conv {
        Some(bank) => {
            let pad = if ids.len() < NGRAM_ORDERS[3] {
                let pad_rows = g.gather(table, &[Vocabulary::PAD])?;
                Some(project(g, pad_rows, &layout.projection)?)
            } else {
                None
            };
            let ngrams = ngram_features(g, projected, pad, bank)?;
            augment_features(g, projected, &ngrams)?
        }
        None => projected,
    };

    let mut bundle = BundleNodes {
        attention: Vec::with_capacity(layout.heads.len()),
        selections: Vec::with_capacity(layout.heads.len()),
        views: Vec::new(),
    };
    for head in &layout.heads {
        let scores = attention_scores(g, head, features)?;
        let weights = attention_weights(g, scores)?;
        bundle.selections.push(select(g, weights, features)?);
        bundle.attention.push(weights);
    }
    bundle.views = compose_views(g, &bundle.selections, &layout.stack)?;
    let mask = match mode {
        Mode::Eval => None,
        Mode::Train { dropout_mask } => dropout_mask.as_ref(),
    };
    let logits = classify(g, &bundle.views, &layout.classifier, mask)?;
    Ok(ForwardNodes { features, logits, bundle })
}

/// Values of the attention weights, selections and views for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBundle {
    pub attention: Vec<Vec<f64>>,
    pub selections: Vec<Vec<f64>>,
    pub views: Vec<Vec<f64>>,
}

impl ViewBundle {
    pub fn from_nodes(g: &Graph<'_>, nodes: &BundleNodes) -> Self {
        let read = |ids: &[NodeId]| ids.iter().map(|&n| g.value(n).data().to_vec()).collect();
        ViewBundle {
            attention: read(&nodes.attention),
            selections: read(&nodes.selections),
            views: read(&nodes.views),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub class: usize,
    pub bundle: ViewBundle,
}

/// A trained network together with the vocabulary it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Mvn {
    pub vocab: Vocabulary,
    pub params: MvnParameters,
}

impl Mvn {
    pub fn classes(&self) -> usize {
        self.params.dims.classes
    }

    pub fn views(&self) -> usize {
        self.params.dims.views
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, ids: &[usize]) -> Result<Prediction, ModelError> {
        let mut g = Graph::with_params(&self.params.store);
        let out = forward(&mut g, &self.params, ids, &Mode::Eval)?;
        let logits = g.value(out.logits).data().to_vec();
        Ok(Prediction {
            class: argmax(&logits),
            bundle: ViewBundle::from_nodes(&g, &out.bundle),
            logits,
        })
    }

    pub fn predict_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Prediction, ModelError> {
        self.predict(&self.vocab.encode(tokens))
    }
}
