//! Text embedding space: unit vectors, encoders, the binary embedding store,
//! the memory bank of recent targets and frequency-weighted negative
//! sampling.

mod bank;
mod negatives;
mod store;
mod world;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bank::{gather_negatives, BankEntry, BankUpdate, MemoryBank};
pub use negatives::sample_negative_classes;
pub use store::{read_store, write_store, StoreEncoder, StoredEmbedding, STORE_MAGIC, STORE_VERSION};
pub use world::{ConceptKind, ConceptWorld, MixingWeights};

/// Unit-norm vector in the shared text latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalize `values` to unit L2 norm.
    pub fn normalize(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::DegenerateEmbedding(format!(
                "cannot normalize vector with norm {norm}"
            )));
        }
        Ok(EmbeddingVector(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Both vectors are unit norm, so the dot product is the cosine.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.dot(other).clamp(-1.0, 1.0)
    }

    /// Bitwise identity key, used to merge labels that encode identically.
    pub fn bit_key(&self) -> Vec<u64> {
        self.0.iter().map(|v| v.to_bits()).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Text to embedding. Implementations must be deterministic.
pub trait TextEncoder: Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Lowercased, whitespace-collapsed form used as the identity of a label.
pub fn normalize_label(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Memoizing wrapper; the training loop encodes the same few hundred labels
/// thousands of times.
pub struct EncodingCache<'a> {
    encoder: &'a dyn TextEncoder,
    cache: HashMap<String, EmbeddingVector>,
}

impl<'a> EncodingCache<'a> {
    pub fn new(encoder: &'a dyn TextEncoder) -> Self {
        EncodingCache {
            encoder,
            cache: HashMap::new(),
        }
    }

    pub fn encode(&mut self, text: &str) -> Result<EmbeddingVector> {
        if let Some(v) = self.cache.get(text) {
            return Ok(v.clone());
        }
        let v = self.encoder.encode(text)?;
        self.cache.insert(text.to_string(), v.clone());
        Ok(v)
    }

    pub fn encoder(&self) -> &'a dyn TextEncoder {
        self.encoder
    }
}
