//! Feature matrix construction: tokenization, vocabulary, embedding tables,
//! the shared word projection and the n-gram convolution features that are
//! appended below the word rows.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::numeric::{Graph, NodeId, NumericError, ParamId, Tensor};

/// N-gram orders of the convolution features, in the order their rows are
/// appended to the feature matrix.
pub const NGRAM_ORDERS: [usize; 4] = [2, 3, 4, 5];

/// Half-width of the uniform range used for embedding rows not covered by a
/// pre-trained file.
pub const EMBEDDING_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embeddings line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("embeddings line {line}: expected {expected} values, found {found}")]
    DimMismatch { line: usize, expected: usize, found: usize },
    #[error("embedding file has no vectors")]
    NoVectors,
    #[error("vocabulary must start with the reserved tokens {UNK_TOKEN:?} and {PAD_TOKEN:?}")]
    MissingSpecials,
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation.
/// Tokens that are pure punctuation disappear.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Dense token index. Index 0 is UNK and index 1 is PAD.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const PAD: usize = 1;

    /// Rebuilds a vocabulary from its token list (as stored in checkpoints).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, FeatureError> {
        if tokens.len() < 2 || tokens[0] != UNK_TOKEN || tokens[1] != PAD_TOKEN {
            return Err(FeatureError::MissingSpecials);
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Index of a regular (non-reserved) token.
    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i > Self::PAD)
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }
}

/// Tokens occurring at least `min_count` times get an index, most frequent
/// first (ties alphabetical). Everything else maps to UNK.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocabulary, FeatureError> {
    if corpus.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for t in doc {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count.max(1) && t != UNK_TOKEN && t != PAD_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = [UNK_TOKEN, PAD_TOKEN]
        .into_iter()
        .chain(kept.into_iter().map(|(t, _)| t))
        .map(str::to_string)
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Word embedding matrix, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    /// Rows copied from a pre-trained file.
    pub covered: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }
}

pub fn random_embeddings<R: Rng>(vocab_size: usize, dim: usize, rng: &mut R) -> EmbeddingTable {
    let data = (0..vocab_size * dim)
        .map(|_| rng.gen_range(-EMBEDDING_INIT_RANGE..=EMBEDDING_INIT_RANGE))
        .collect();
    EmbeddingTable {
        matrix: Tensor::new(vec![vocab_size, dim], data).expect("embedding shape"),
        covered: 0,
    }
}

/// Loads GloVe-format text vectors for the tokens of `vocab`.
pub fn load_embeddings<R: Rng>(path: &Path, vocab: &Vocabulary, rng: &mut R) -> Result<EmbeddingTable, FeatureError> {
    let file = File::open(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_embeddings(BufReader::new(file), vocab, rng).map_err(|e| match e {
        FeatureError::Io { source, .. } => FeatureError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Reader form of [`load_embeddings`]. The dimension is taken from the first
/// vector; rows not present in the input (UNK, PAD included) are drawn
/// uniformly from `[-0.05, 0.05]` in row order.
pub fn read_embeddings<B: BufRead, R: Rng>(reader: B, vocab: &Vocabulary, rng: &mut R) -> Result<EmbeddingTable, FeatureError> {
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| FeatureError::Io {
            path: PathBuf::new(),
            source,
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        if token.is_empty() {
            return Err(FeatureError::Malformed {
                line: line_no,
                msg: "missing token".into(),
            });
        }
        let values = fields
            .map(|f| {
                f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| FeatureError::Malformed {
                    line: line_no,
                    msg: format!("bad number {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.is_empty() {
            return Err(FeatureError::Malformed {
                line: line_no,
                msg: "no vector values".into(),
            });
        }
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(FeatureError::DimMismatch {
                line: line_no,
                expected,
                found: values.len(),
            });
        }
        if let Some(idx) = vocab.get(token) {
            rows[idx].get_or_insert(values);
        }
    }
    let dim = dim.ok_or(FeatureError::NoVectors)?;
    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut covered = 0;
    for row in rows {
        match row {
            Some(v) => {
                covered += 1;
                data.extend(v);
            }
            None => data.extend((0..dim).map(|_| rng.gen_range(-EMBEDDING_INIT_RANGE..=EMBEDDING_INIT_RANGE))),
        }
    }
    Ok(EmbeddingTable {
        matrix: Tensor::new(vec![vocab.len(), dim], data)?,
        covered,
    })
}

/// Shared word projection: `weight` is `d_embed x d`, `bias` has length `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// One n-gram filter: `weight` is `d x (n * d)`, `bias` has length `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvFilter {
    pub order: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// The four n-gram filters, ordered as [`NGRAM_ORDERS`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvFilterBank {
    pub filters: [ConvFilter; 4],
}

/// `tanh(rows * weight + bias)` for each embedded row.
pub fn project(g: &mut Graph<'_>, rows: NodeId, proj: &Projection) -> Result<NodeId, NumericError> {
    let w = g.param(proj.weight);
    let b = g.param(proj.bias);
    let z = g.matmul(rows, w)?;
    let z = g.add_bias(z, b)?;
    g.tanh(z)
}

/// Max-pooled n-gram features, one `d`-vector per order in [`NGRAM_ORDERS`].
///
/// Each window of `n` projected rows is flattened, filtered and squashed by
/// tanh; the result is the elementwise max over all windows. Texts shorter
/// than `n` are right-padded with `pad_row` (a `1 x d` projected PAD row),
/// which must be supplied whenever `rows(projected) < 5`.
pub fn ngram_features(
    g: &mut Graph<'_>,
    projected: NodeId,
    pad_row: Option<NodeId>,
    bank: &ConvFilterBank,
) -> Result<[NodeId; 4], NumericError> {
    let h = g.shape(projected)[0];
    let mut out = [projected; 4];
    for (slot, filter) in out.iter_mut().zip(&bank.filters) {
        let n = filter.order;
        let input = if h < n {
            let pad = pad_row.ok_or(NumericError::Empty("ngram_features: pad row"))?;
            let mut parts = vec![projected];
            parts.extend(std::iter::repeat_n(pad, n - h));
            g.concat_rows(&parts)?
        } else {
            projected
        };
        let windows = g.windows(input, n)?;
        let w = g.param(filter.weight);
        let wt = g.transpose(w)?;
        let b = g.param(filter.bias);
        let z = g.matmul(windows, wt)?;
        let z = g.add_bias(z, b)?;
        let act = g.tanh(z)?;
        *slot = g.max_rows(act)?;
    }
    Ok(out)
}

/// Word rows first, then one row per n-gram order: `(H + 4) x d`.
pub fn augment_features(g: &mut Graph<'_>, projected: NodeId, ngrams: &[NodeId; 4]) -> Result<NodeId, NumericError> {
    let d = g.shape(projected)[1];
    let mut parts = vec![projected];
    for &v in ngrams {
        if g.shape(v) != [d] {
            return Err(crate::numeric::shape_err(
                "augment_features",
                format!("n-gram vector {:?} vs feature dim {d}", g.shape(v)),
            ));
        }
        parts.push(g.reshape(v, &[1, d])?);
    }
    g.concat_rows(&parts)
}
