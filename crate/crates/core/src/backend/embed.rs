use serde::{Deserialize, Serialize};

use super::BackendError;

pub const DEFAULT_DIMENSION: usize = 256;

/// Fixed-length embedding, L2-normalized unless it is the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl EmbeddingVector {
    pub fn zeros(dimension: usize) -> Self {
        Self {
            values: vec![0.0; dimension],
            norm: 0.0,
        }
    }

    /// Scales `values` to unit length. A zero vector stays all-zeros.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Self { values, norm: 0.0 };
        }
        for v in &mut values {
            *v /= norm;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self { values, norm }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// `dot(a, b) / (|a| |b|)`, or 0 when either side is the zero vector.
///
/// Rounded to 12 decimals, so equal similarities reached through different
/// float paths compare equal and rankings keep their tie order.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, BackendError> {
    if a.values.len() != b.values.len() {
        return Err(BackendError::DimensionMismatch {
            left: a.values.len(),
            right: b.values.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let c = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    Ok((c * 1e12).round() / 1e12)
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed(text)
    }
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    s.bytes().fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Hashed bag-of-words embedder: each token lands in `fnv1a64(token) % D`.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut counts = vec![0.0; self.dimension];
        for token in tokenize(text) {
            counts[(fnv1a64(&token) % self.dimension as u64) as usize] += 1.0;
        }
        EmbeddingVector::normalized(counts)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        Ok(self.embed_text(text))
    }
}
