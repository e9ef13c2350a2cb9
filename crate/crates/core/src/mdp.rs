//! Trajectory-return statistics and weights for the episode-level variant
//! of reward-weighted training.
//!
//! An episode's weight is `exp(R(τ)/λ)` on the raw return, or
//! `exp(R̃(τ)/λ)` on the standardized return `R̃ = (R − μ)/σ`. Because
//! standardization is an affine map of returns, it is exactly a change of
//! temperature (`λ → λ·σ`) plus a constant factor common to every weight;
//! it never reorders episodes.

use serde::{Deserialize, Serialize};

use crate::env::OfflineDataset;
use crate::error::{Error, Result};

/// Mean and population standard deviation of a set of returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub mean: f64,
    pub std_dev: f64,
}

pub fn return_stats(returns: &[f64]) -> Result<ReturnStats> {
    if returns.is_empty() {
        return Err(Error::parameter("cannot compute statistics of no returns"));
    }
    if let Some(bad) = returns.iter().find(|r| !r.is_finite()) {
        return Err(Error::parameter(format!("non-finite return {bad}")));
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(ReturnStats {
        mean,
        std_dev: var.sqrt(),
    })
}

impl ReturnStats {
    /// Standardized value; a constant batch (zero deviation) maps to 0
    /// everywhere, so downstream exponential weights degenerate to 1 and
    /// training falls back to behavior cloning.
    pub fn standardize(&self, value: f64) -> f64 {
        if self.std_dev == 0.0 {
            0.0
        } else {
            (value - self.mean) / self.std_dev
        }
    }
}

/// Exponential weights `exp(R(τ)/λ)` (optionally standardized) for every
/// trajectory in the dataset.
pub fn trajectory_weights(
    dataset: &OfflineDataset,
    lambda: f64,
    standardize: bool,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::parameter(format!(
            "weight temperature must be positive, got {lambda}"
        )));
    }
    let trajectories = dataset
        .trajectories
        .as_ref()
        .ok_or_else(|| Error::parameter("dataset has no trajectory structure"))?;
    let returns: Vec<f64> = trajectories.iter().map(|t| t.total_return()).collect();
    let stats = return_stats(&returns)?;
    returns
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let v = if standardize { stats.standardize(r) } else { r };
            let w = (v / lambda).exp();
            if w.is_finite() {
                Ok(w)
            } else {
                Err(Error::NonFiniteWeight { index: i, value: w })
            }
        })
        .collect()
}

/// Sub-Gaussian parameter of a sum of independent per-step noises:
/// `sqrt(Σ σ_t²)`.
pub fn aggregate_sigma(per_step_sigmas: &[f64]) -> f64 {
    per_step_sigmas.iter().map(|s| s * s).sum::<f64>().sqrt()
}
