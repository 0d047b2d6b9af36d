//! Real-vector primitives, a keyed vector store, and K-Means.

mod kmeans;
mod store;

pub use kmeans::{kmeans, kmeans_with, KMeansOptions, KMeansResult};
pub use store::{mock_embed, nearest, nearest_where, VectorStore};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("vector has no entries")]
    EmptyVector,
    #[error("vector contains a non-finite entry")]
    NonFinite,
    #[error("vector store is empty")]
    EmptyStore,
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("k = {k} exceeds the {points} available points")]
    KTooLarge { k: usize, points: usize },
    #[error("invalid k-means parameter: {0}")]
    InvalidParameter(String),
    #[error("duplicate key {key:?} on line {line}")]
    DuplicateKey { key: String, line: usize },
    #[error("malformed vector record on line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Finite, non-empty real vector. Stored as `f32`; arithmetic accumulates in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(values: Vec<f32>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn from_f64(values: &[f64]) -> Result<Self, VectorError> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64, VectorError> {
        self.check_dim(other)?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Unit-norm copy; zero vectors are rejected.
    pub fn normalized(&self) -> Result<Vector, VectorError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(VectorError::ZeroVector);
        }
        Ok(Vector(self.0.iter().map(|&v| (v as f64 / n) as f32).collect()))
    }

    fn check_dim(&self, other: &Vector) -> Result<(), VectorError> {
        if self.dim() != other.dim() {
            return Err(VectorError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f32>> for Vector {
    type Error = VectorError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Vector::new(values)
    }
}

impl From<Vector> for Vec<f32> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cosine similarity, clamped into [-1, 1] against rounding.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64, VectorError> {
    let d = u.dot(v)?;
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok((d / (nu * nv)).clamp(-1.0, 1.0))
}
