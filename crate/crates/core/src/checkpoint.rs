//! Binary checkpoints: the training config, the vocabulary and every
//! parameter tensor, so a saved model needs nothing else to run.
//!
//! Layout (all integers little-endian `u64` unless noted):
//!
//! ```text
//! magic "MVNCKPT\0" | version u32 | header JSON (len + bytes)
//! vocab: count, then per token len + UTF-8 bytes
//! params: count, then per tensor name (len + bytes), rank, dims, f64 data
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, Vocabulary};
use crate::model::{ModelDims, ModelError, Mvn, MvnParameters};
use crate::numeric::{NumericError, ParamStore, Tensor};
use crate::training::TrainConfig;

const MAGIC: &[u8; 8] = b"MVNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after checkpoint")]
    Trailing(usize),
    #[error("invalid UTF-8 in checkpoint string")]
    Utf8,
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    dims: ModelDims,
}

/// A trained model with the config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Mvn,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, x: usize) {
        self.0.extend_from_slice(&(x as u64).to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len());
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<usize, CheckpointError> {
        let at = self.pos;
        let raw = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(raw).map_err(|_| CheckpointError::Truncated(at))
    }

    fn bytes(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.u64()?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| CheckpointError::Utf8)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = Header {
            config: self.config.clone(),
            dims: self.model.params.dims.clone(),
        };
        w.bytes(&serde_json::to_vec(&header).expect("header serializes"));
        let tokens = self.model.vocab.tokens();
        w.u64(tokens.len());
        for t in tokens {
            w.bytes(t.as_bytes());
        }
        let store = &self.model.params.store;
        w.u64(store.len());
        for (name, t) in store.iter() {
            w.bytes(name.as_bytes());
            w.u64(t.rank());
            for &d in t.shape() {
                w.u64(d);
            }
            for x in t.data() {
                w.0.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header: Header = serde_json::from_slice(r.bytes()?)?;

        let n_tokens = r.u64()?;
        let mut tokens = Vec::with_capacity(n_tokens.min(buf.len()));
        for _ in 0..n_tokens {
            tokens.push(r.string()?);
        }
        let vocab = Vocabulary::from_tokens(tokens)?;

        let n_params = r.u64()?;
        let mut store = ParamStore::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.u64()?;
            let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(CheckpointError::Truncated(r.pos))?;
            let raw = r.take(len.checked_mul(8).ok_or(CheckpointError::Truncated(r.pos))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            store.add(name, Tensor::new(shape, data)?);
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::Trailing(buf.len() - r.pos));
        }
        if header.dims.vocab_size != vocab.len() {
            return Err(ModelError::Dims(format!(
                "checkpoint vocabulary has {} tokens, model expects {}",
                vocab.len(),
                header.dims.vocab_size
            ))
            .into());
        }
        let params = MvnParameters::from_store(header.dims, store)?;
        Ok(Checkpoint {
            config: header.config,
            model: Mvn { vocab, params },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let buf = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}
