//! Joint embedding pre-training on the unit sphere.
//!
//! Documents, metadata instances, labels, and words (center and context
//! vectors) share one space. Four margin ranking objectives pull each
//! document toward its metadata, labels, and words, and each word toward
//! its context window. Every update projects the Euclidean gradient onto
//! the tangent space and retracts back to the sphere, so all vectors stay
//! unit-norm throughout.

mod pretrain;
mod sampler;
mod space;

pub use pretrain::{
    euclidean_gradients, pretrain, LearningRate, PairGradients, PretrainConfig, PretrainLog, Pretrainer,
};
pub use sampler::{context_window, sample_excluding, sample_label_negative, PairSampler, Part, TrainingPair};
pub use space::{random_unit_table, EmbeddingSpace, TableRef};

use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-6;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dims(expected: usize, others: &[&[f64]]) -> Result<()> {
    for o in others {
        if o.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: o.len(),
            });
        }
    }
    Ok(())
}

/// `[γ + negative·anchor − positive·anchor]_+`.
pub fn margin_term(anchor: &[f64], positive: &[f64], negative: &[f64], gamma: f64) -> Result<f64> {
    check_dims(anchor.len(), &[positive, negative])?;
    Ok((gamma + dot(negative, anchor) - dot(positive, anchor)).max(0.0))
}

/// Tangent-space projection `(I − e eᵀ) g` at the unit vector `e`.
pub fn riemannian_project(e: &[f64], euclidean: &[f64]) -> Result<Vec<f64>> {
    check_dims(e.len(), &[euclidean])?;
    let n = norm(e);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Precondition(format!(
            "projection point has norm {n}, expected 1"
        )));
    }
    let radial = dot(e, euclidean);
    Ok(euclidean.iter().zip(e).map(|(g, x)| g - radial * x).collect())
}

/// Moves from `e` along the tangent `direction` by `alpha` and renormalizes.
pub fn retract(e: &[f64], direction: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dims(e.len(), &[direction])?;
    if alpha <= 0.0 {
        return Err(Error::Argument(format!(
            "step size must be positive, got {alpha}"
        )));
    }
    let tangency = dot(e, direction).abs();
    if tangency > UNIT_TOLERANCE * norm(direction).max(1.0) {
        return Err(Error::Precondition(format!(
            "direction is not tangent (|e·d| = {tangency:e})"
        )));
    }
    let moved: Vec<f64> = e.iter().zip(direction).map(|(x, d)| x + alpha * d).collect();
    let n = norm(&moved);
    if n < 1e-12 || !n.is_finite() {
        return Err(Error::DegenerateStep(n));
    }
    Ok(moved.into_iter().map(|v| v / n).collect())
}
