//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "MSYNCKPT"
//! version u32
//! hlen    u64      length of the JSON header
//! header  hlen bytes of UTF-8 JSON (config, vocabulary, tensor index, adapters, metadata)
//! payload f64 values of every indexed tensor, row-major, in index order
//! sha256  32 bytes over everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use molsyn_autodiff::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::model::{LoraAdapter, ModelConfig, Transformer};
use crate::tokenizer::Vocabulary;

pub const MAGIC: &[u8; 8] = b"MSYNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Transformer,
    pub vocab: Vocabulary,
    /// Named adapters, e.g. `group5.prediction`.
    pub adapters: BTreeMap<String, LoraAdapter>,
    /// Additional tensors such as router weights.
    pub extra: BTreeMap<String, Tensor>,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocabulary: Vec<String>,
    adapters: BTreeMap<String, LoraAdapter>,
    tensors: Vec<TensorEntry>,
    metadata: serde_json::Value,
}

fn corrupt(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(model: Transformer, vocab: Vocabulary) -> Self {
        Self {
            model,
            vocab,
            adapters: BTreeMap::new(),
            extra: BTreeMap::new(),
            metadata: serde_json::Value::Null,
        }
    }

    fn indexed(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (n, t) in &self.model.params {
            out.push((format!("base/{n}"), t));
        }
        for (a, ad) in &self.adapters {
            for (n, t) in &ad.tensors {
                out.push((format!("adapter/{a}/{n}"), t));
            }
        }
        for (n, t) in &self.extra {
            out.push((format!("extra/{n}"), t));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.indexed();
        let header = Header {
            config: self.model.config.clone(),
            vocabulary: self.vocab.tokens().to_vec(),
            adapters: self.adapters.clone(),
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(json.len() + 64);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])?;
        let mut payload = &body[header_end..];

        let mut base = BTreeMap::new();
        let mut adapters = header.adapters;
        let mut extra = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(corrupt("truncated payload"));
            }
            let data: Vec<f64> = payload[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[n * 8..];
            let t = Tensor::new(entry.shape, data)?;
            let mut parts = entry.name.splitn(3, '/');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("base"), Some(n), None) => {
                    base.insert(n.to_string(), t);
                }
                (Some("adapter"), Some(a), Some(n)) => {
                    adapters
                        .get_mut(a)
                        .ok_or_else(|| corrupt(format!("tensor for undeclared adapter {a}")))?
                        .tensors
                        .insert(n.to_string(), t);
                }
                (Some("extra"), Some(n), None) => {
                    extra.insert(n.to_string(), t);
                }
                _ => return Err(corrupt(format!("unrecognized tensor name {}", entry.name))),
            }
        }
        if !payload.is_empty() {
            return Err(corrupt("trailing payload bytes"));
        }
        let model = Transformer {
            config: header.config,
            params: base,
        };
        model.check()?;
        for ad in adapters.values() {
            ad.check(&model.config)?;
        }
        let vocab = Vocabulary::from_tokens(header.vocabulary);
        if vocab.len() != model.config.vocab_size {
            return Err(corrupt("vocabulary size does not match the model"));
        }
        Ok(Self {
            model,
            vocab,
            adapters,
            extra,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CoreError::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    pub fn adapter(&self, name: &str) -> Result<&LoraAdapter> {
        self.adapters
            .get(name)
            .ok_or_else(|| CoreError::Checkpoint(format!("adapter {name} not found")))
    }
}
