//! Dense vector helpers. Storage is `f32`; accumulation is `f64`.

use alloc::vec::Vec;

use crate::error::invalid;
use crate::{Error, Result};

pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

pub fn norm(u: &[f32]) -> f64 {
    libm::sqrt(dot(u, u))
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), actual: v.len() });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(invalid!("cosine of a zero vector"));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Returns `u / ‖u‖` rounded to `f32`, or `None` for the zero vector.
pub fn normalized(u: &[f64]) -> Option<Vec<f32>> {
    let n = libm::sqrt(u.iter().map(|x| x * x).sum::<f64>());
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(u.iter().map(|x| (x / n) as f32).collect())
}

/// True when `‖u‖` is within `tol` of one.
pub fn is_unit(u: &[f32], tol: f64) -> bool {
    (norm(u) - 1.0).abs() <= tol
}
