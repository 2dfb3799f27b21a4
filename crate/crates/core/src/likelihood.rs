//! Observation models: Gaussian noise for regression and the softmax
//! likelihood (identity mixing) for classification.

use crate::error::{contract, Result};
use crate::stats;

/// Task-level likelihood attached to a model's output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification { classes: usize },
}

impl TaskKind {
    pub fn output_width(&self) -> usize {
        match self {
            TaskKind::Regression => 1,
            TaskKind::Classification { classes } => *classes,
        }
    }
}

/// `log N(y | mu, var)`; the variance must be strictly positive.
pub fn gaussian_log_prob(y: f64, mu: f64, var: f64) -> Result<f64> {
    if var <= 0.0 {
        return Err(contract(format!("gaussian_log_prob wants positive variance, got {var}")));
    }
    Ok(stats::gaussian_logpdf(y, mu, var))
}

/// Class probabilities from latent values under the identity mixing
/// matrix: max-stabilized softmax, clamped away from exact 0 so logs
/// stay finite.
pub fn softmax_probs(f: &[f64]) -> Vec<f64> {
    let mx = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = f.iter().map(|&v| (v - mx).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / denom).max(1e-300)).collect()
}
