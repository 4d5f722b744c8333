//! Text embeddings: the vector type, cosine similarity and the encoders.

mod adapter;
mod cache;
mod hashing;
mod remote;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapter::{AdapterEncoder, AdapterWeights};
pub use cache::{cache_embeddings, CacheReport, CachedEncoder, PrecomputedEncoder, VectorCache};
pub use hashing::{hash_encode, HashEncoder, MIN_HASH_DIMENSION};
pub use remote::RemoteEncoder;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error("non-finite embedding component")]
    NonFinite,
    #[error("{0}")]
    Domain(String),
    #[error("no embedding available for text {0:?}")]
    Missing(String),
    #[error("vector cache: {0}")]
    Cache(String),
    #[error("embedding service: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

/// Dense real vector, double precision in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbeddingError::Domain("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn squared_norm(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|v| v * factor).collect())
    }

    /// Rounds every component through `f32`, the on-disk precision.
    pub fn quantized(&self) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|&v| v as f32 as f64).collect())
    }
}

/// Left-to-right dot product; the fixed order keeps results reproducible.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dot(p, q) / (|p| |q|)`, clamped to [-1, 1].
pub fn cosine_similarity(p: &EmbeddingVector, q: &EmbeddingVector) -> Result<f64> {
    cosine_with_norms(p.values(), q.values(), p.squared_norm(), q.squared_norm())
}

/// Cosine similarity given precomputed squared norms. Produces bit-identical
/// results to [`cosine_similarity`] when the norms come from
/// [`EmbeddingVector::squared_norm`].
pub fn cosine_with_norms(p: &[f64], q: &[f64], pp: f64, qq: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(EmbeddingError::Shape {
            expected: p.len(),
            actual: q.len(),
        });
    }
    if pp == 0.0 || qq == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let mut denom = (pp * qq).sqrt();
    if !denom.is_finite() || denom == 0.0 {
        denom = pp.sqrt() * qq.sqrt();
    }
    let sim = dot(p, q) / denom;
    if !sim.is_finite() {
        return Err(EmbeddingError::NonFinite);
    }
    Ok(sim.clamp(-1.0, 1.0))
}

/// Maps a text to a fixed-dimension vector. Implementations are deterministic
/// for fixed parameters and safe to call from many threads.
pub trait Encoder: Send + Sync {
    fn dimension(&self) -> usize;

    /// Short identifier recorded in manifests and cache headers.
    fn name(&self) -> String;

    fn encode(&self, text: &str) -> Result<EmbeddingVector>;

    /// Encodes in parallel, results in input order.
    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.par_iter().map(|t| self.encode(t)).collect()
    }
}

impl<E: Encoder + ?Sized> Encoder for Arc<E> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn name(&self) -> String {
        (**self).name()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).encode(text)
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).encode_batch(texts)
    }
}

impl<E: Encoder + ?Sized> Encoder for &E {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn name(&self) -> String {
        (**self).name()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).encode(text)
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        (**self).encode_batch(texts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(),
            0.0
        );
        let diag = cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((diag - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let x = v(&[0.3, -1.7, 2.2]);
        assert_eq!(cosine_similarity(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::ZeroNorm)
        ));
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::Shape { .. })
        ));
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_scale_invariant(
            p in proptest::collection::vec(-10.0f64..10.0, 6),
            q in proptest::collection::vec(-10.0f64..10.0, 6),
            alpha in 0.001f64..1000.0,
        ) {
            let (p, q) = (v(&p), v(&q));
            prop_assume!(p.norm() > 1e-6 && q.norm() > 1e-6);
            let pq = cosine_similarity(&p, &q).unwrap();
            prop_assert_eq!(pq, cosine_similarity(&q, &p).unwrap());
            prop_assert!((-1.0..=1.0).contains(&pq));
            let scaled = cosine_similarity(&p.scaled(alpha), &q).unwrap();
            prop_assert!((scaled - pq).abs() < 1e-12);
            prop_assert_eq!(cosine_similarity(&p, &p).unwrap(), 1.0);
        }
    }
}
