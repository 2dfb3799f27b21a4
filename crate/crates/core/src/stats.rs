//! Standard normal helpers shared by likelihoods, metrics, and the
//! acquisition function.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

pub const LN_2PI: f64 = 1.8378770664093453;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    std_normal().pdf(z)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "quantile wants p in [0,1], got {p}");
    std_normal().inverse_cdf(p)
}

/// Half-width multiplier for a central interval of coverage `alpha`:
/// `z = Phi^-1((1 + alpha) / 2)`.
pub fn central_interval_z(alpha: f64) -> f64 {
    normal_quantile((1.0 + alpha) / 2.0)
}

/// Log density of `N(mean, var)` at `y`.
pub fn gaussian_logpdf(y: f64, mean: f64, var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}
