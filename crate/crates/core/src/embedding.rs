//! Text embeddings behind a provider interface, plus the cosine kernel.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io;

/// Matches MiniLM-class sentence encoders so their exported vectors drop in.
pub const DEFAULT_DIMENSION: usize = 384;

/// Fixed-length vector with its Euclidean norm cached. Serialized as a bare
/// array of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding("non-finite entry".into()));
        }
        Ok(Self::new_unchecked(values))
    }

    fn new_unchecked(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self { values, norm }
    }

    /// The unit basis vector `e_index`.
    pub fn basis(dimension: usize, index: usize) -> Self {
        let mut values = vec![0.0; dimension];
        values[index] = 1.0;
        Self { values, norm: 1.0 }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.dimension() != other.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                found: other.dimension(),
            });
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new_unchecked(self.values.iter().map(|v| v * k).collect())
    }
}

impl Serialize for EmbeddingVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.values.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        EmbeddingVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    let dot = a.dot(b)?;
    if a.norm == 0.0 || b.norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// Maps text to vectors. Implementations must be deterministic: equal text
/// yields bitwise-equal vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
    fn dimension(&self) -> usize;
}

/// Signed feature hashing over lowercase alphanumeric tokens, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
}

pub fn hash_embedder(dimension: usize, seed: u64) -> Result<HashEmbedder> {
    HashEmbedder::new(dimension, seed)
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension < 2 {
            return Err(Error::InvalidEmbedding(format!(
                "hash embedder dimension must be at least 2, got {dimension}"
            )));
        }
        Ok(Self { dimension, seed })
    }
}

// FNV-1a with the seed folded into the offset basis.
fn seeded_hash(seed: u64, token: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in token.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche (splitmix64)
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut acc = vec![0.0f64; self.dimension];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = seeded_hash(self.seed, token);
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(EmbeddingVector::basis(self.dimension, 0));
        }
        for v in &mut acc {
            *v /= norm;
        }
        Ok(EmbeddingVector::new_unchecked(acc))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Exact-key lookup into vectors precomputed by an external encoder.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dimension: usize,
    table: HashMap<String, EmbeddingVector>,
}

pub fn file_provider(path: &Path) -> Result<FileProvider> {
    FileProvider::load(path)
}

impl FileProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let table: indexmap::IndexMap<String, EmbeddingVector> = io::read_json(path)?;
        Self::from_entries(table)
    }

    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, EmbeddingVector)>,
    {
        let mut dimension = None;
        let mut table = HashMap::new();
        for (key, vector) in entries {
            match dimension {
                None => dimension = Some(vector.dimension()),
                Some(d) if d != vector.dimension() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: vector.dimension(),
                    })
                }
                _ => {}
            }
            table.insert(key, vector);
        }
        let dimension = dimension
            .ok_or_else(|| Error::InvalidEmbedding("embedding file contains no vectors".into()))?;
        Ok(Self { dimension, table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for FileProvider {
    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding(text.to_string()))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
