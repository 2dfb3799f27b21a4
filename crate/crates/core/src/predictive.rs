//! Shared predictive-distribution vocabulary: every model family hands
//! its predictions to the metrics layer as one of these shapes.

use crate::error::{contract, Result};
use crate::gp::GaussianMarginals;
use crate::stats;
use crate::tensor::Tensor;

/// Predictive distribution over a batch of query points.
#[derive(Debug, Clone)]
pub enum Predictive {
    /// Independent Gaussian marginals, one per point.
    Gaussian(GaussianMarginals),
    /// Gaussian mixture: weights shared across points, component `j`
    /// holding per-point marginals.
    Mixture { weights: Vec<f64>, components: Vec<GaussianMarginals> },
    /// Per-row class probabilities, `[N, C]`.
    Categorical(Tensor),
}

impl Predictive {
    /// Validated mixture constructor: positive weights summing to one,
    /// components nonempty and of equal length.
    pub fn mixture(weights: Vec<f64>, components: Vec<GaussianMarginals>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(contract("mixture needs one weight per component"));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(contract("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(contract(format!("mixture weights sum to {total}, expected 1")));
        }
        let n = components[0].len();
        if components.iter().any(|c| c.len() != n) {
            return Err(contract("mixture components differ in length"));
        }
        Ok(Predictive::Mixture { weights, components })
    }

    /// Number of query points covered.
    pub fn len(&self) -> usize {
        match self {
            Predictive::Gaussian(g) => g.len(),
            Predictive::Mixture { components, .. } => components[0].len(),
            Predictive::Categorical(p) => p.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-point predictive mean and variance (moment-matched for
    /// mixtures). Rejects categorical predictions.
    pub fn mean_var(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Predictive::Gaussian(g) => Ok((g.means.clone(), g.vars.clone())),
            Predictive::Mixture { weights, components } => {
                let n = self.len();
                let mut means = vec![0.0; n];
                let mut second = vec![0.0; n];
                for (w, c) in weights.iter().zip(components) {
                    for i in 0..n {
                        means[i] += w * c.means[i];
                        second[i] += w * (c.vars[i] + c.means[i] * c.means[i]);
                    }
                }
                let vars: Vec<f64> =
                    (0..n).map(|i| (second[i] - means[i] * means[i]).max(0.0)).collect();
                Ok((means, vars))
            }
            Predictive::Categorical(_) => {
                Err(contract("categorical prediction has no scalar mean/variance"))
            }
        }
    }

    /// Per-point log density of scalar targets. Mixtures go through
    /// log-sum-exp over component log densities. Rejects categorical.
    pub fn log_density(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.len() {
            return Err(contract(format!(
                "target length {} does not match prediction length {}",
                y.len(),
                self.len()
            )));
        }
        match self {
            Predictive::Gaussian(g) => Ok((0..y.len())
                .map(|i| stats::gaussian_logpdf(y[i], g.means[i], g.vars[i]))
                .collect()),
            Predictive::Mixture { weights, components } => {
                let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
                Ok((0..y.len())
                    .map(|i| {
                        let terms: Vec<f64> = components
                            .iter()
                            .zip(&log_w)
                            .map(|(c, lw)| lw + stats::gaussian_logpdf(y[i], c.means[i], c.vars[i]))
                            .collect();
                        log_sum_exp(&terms)
                    })
                    .collect())
            }
            Predictive::Categorical(_) => {
                Err(contract("categorical prediction scores class labels, not scalar targets"))
            }
        }
    }

    /// Class-probability matrix of a categorical prediction.
    pub fn class_probs(&self) -> Result<&Tensor> {
        match self {
            Predictive::Categorical(p) => Ok(p),
            _ => Err(contract("prediction is not categorical")),
        }
    }
}

/// `log(sum_i exp(x_i))`, max-stabilized.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marg(means: &[f64], vars: &[f64]) -> GaussianMarginals {
        GaussianMarginals::new(means.to_vec(), vars.to_vec()).unwrap()
    }

    #[test]
    fn mixture_moments_match_hand_computation() {
        // 0.3 N(1, 0.5) + 0.7 N(-1, 2): mean -0.4, second moment 2.55
        let p = Predictive::mixture(
            vec![0.3, 0.7],
            vec![marg(&[1.0], &[0.5]), marg(&[-1.0], &[2.0])],
        )
        .unwrap();
        let (m, v) = p.mean_var().unwrap();
        assert!((m[0] + 0.4).abs() < 1e-12);
        assert!((v[0] - (2.55 - 0.16)).abs() < 1e-12);
    }

    #[test]
    fn single_component_mixture_density_is_gaussian_density() {
        let p = Predictive::mixture(vec![1.0], vec![marg(&[0.3], &[0.8])]).unwrap();
        let g = Predictive::Gaussian(marg(&[0.3], &[0.8]));
        let a = p.log_density(&[0.1]).unwrap()[0];
        let b = g.log_density(&[0.1]).unwrap()[0];
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn two_equal_components_collapse() {
        let p = Predictive::mixture(
            vec![0.5, 0.5],
            vec![marg(&[0.3], &[0.8]), marg(&[0.3], &[0.8])],
        )
        .unwrap();
        let g = Predictive::Gaussian(marg(&[0.3], &[0.8]));
        let a = p.log_density(&[-0.5]).unwrap()[0];
        let b = g.log_density(&[-0.5]).unwrap()[0];
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn invalid_mixtures_are_rejected() {
        assert!(Predictive::mixture(vec![0.4, 0.4], vec![marg(&[0.0], &[1.0]); 2]).is_err());
        assert!(Predictive::mixture(vec![1.0, -0.0], vec![marg(&[0.0], &[1.0]); 2]).is_err());
        assert!(Predictive::mixture(
            vec![0.5, 0.5],
            vec![marg(&[0.0], &[1.0]), marg(&[0.0, 1.0], &[1.0, 1.0])],
        )
        .is_err());
        assert!(Predictive::mixture(vec![], vec![]).is_err());
    }

    #[test]
    fn gaussian_mean_var_passes_through() {
        let p = Predictive::Gaussian(marg(&[1.0, 2.0], &[0.1, 0.2]));
        let (m, v) = p.mean_var().unwrap();
        assert_eq!(m, vec![1.0, 2.0]);
        assert_eq!(v, vec![0.1, 0.2]);
    }

    #[test]
    fn categorical_rejects_scalar_queries() {
        let p = Predictive::Categorical(Tensor::from_rows(&[vec![0.2, 0.8]]));
        assert!(p.mean_var().is_err());
        assert!(p.log_density(&[0.0]).is_err());
        assert!(p.class_probs().is_ok());
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert!((log_sum_exp(&[0.0, 0.0]) - 2.0f64.ln()).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0, 1000.0]);
        assert!((big - (1000.0 + 2.0f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
