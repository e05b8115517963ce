use std::ops::Deref;

use thiserror::Error;

/// Norms at or below this are treated as degenerate.
pub const MIN_NORM: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("degenerate vector (norm {0:e})")]
    Degenerate(f64),
    #[error("non-finite vector component")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
}

/// A descriptor in the joint embedding space, normalized on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Normalizes `v`. Rejects non-finite input and norms `<= MIN_NORM`.
    pub fn new(mut v: Vec<f64>) -> Result<Self, VectorError> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(VectorError::NonFinite);
        }
        let n = norm(&v);
        if !(n > MIN_NORM) || !n.is_finite() {
            return Err(VectorError::Degenerate(n));
        }
        for x in v.iter_mut() {
            *x /= n;
        }
        Ok(Self(v))
    }

    pub fn from_f32(v: &[f32]) -> Result<Self, VectorError> {
        Self::new(v.iter().map(|&x| x as f64).collect())
    }

    /// Wraps `v` without renormalizing; used when reading back vectors that
    /// were normalized before being written.
    pub fn from_raw_unchecked(v: Vec<f64>) -> Self {
        Self(v)
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

    pub fn cosine(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl Deref for UnitVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
