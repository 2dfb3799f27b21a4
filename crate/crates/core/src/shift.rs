//! Feature-level distribution shifts applied to held-out test features
//! without retraining: additive noise, masking, scaling, within-column
//! permutation, and outlier injection, each parameterized by a severity
//! level in [0, 1].

use crate::error::{contract, Result};
use crate::seeding;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

/// The five perturbation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    GaussianNoise,
    FeatureMasking,
    FeatureScaling,
    FeaturePermutation,
    OutlierInjection,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::GaussianNoise,
        PerturbationKind::FeatureMasking,
        PerturbationKind::FeatureScaling,
        PerturbationKind::FeaturePermutation,
        PerturbationKind::OutlierInjection,
    ];

    /// Stable name used in result tables and configs.
    pub fn name(&self) -> &'static str {
        match self {
            PerturbationKind::GaussianNoise => "gaussian_noise",
            PerturbationKind::FeatureMasking => "feature_masking",
            PerturbationKind::FeatureScaling => "feature_scaling",
            PerturbationKind::FeaturePermutation => "feature_permutation",
            PerturbationKind::OutlierInjection => "outlier_injection",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        PerturbationKind::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| contract(format!("unknown perturbation kind {name:?}")))
    }

    fn stream_index(&self) -> u64 {
        PerturbationKind::ALL.iter().position(|k| k == self).unwrap() as u64
    }
}

/// One fully specified perturbation: kind, severity, seed, and the
/// per-feature standard deviations of the training split (which scale the
/// noise and outlier magnitudes).
#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub severity: f64,
    pub seed: u64,
    pub feature_stds: Vec<f64>,
}

impl PerturbationSpec {
    pub fn new(
        kind: PerturbationKind,
        severity: f64,
        seed: u64,
        feature_stds: Vec<f64>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&severity) {
            return Err(contract(format!("severity must lie in [0, 1], got {severity}")));
        }
        if feature_stds.iter().any(|&s| !(s >= 0.0)) {
            return Err(contract("feature stds must be nonnegative"));
        }
        Ok(PerturbationSpec { kind, severity, seed, feature_stds })
    }
}

/// The evaluation grid of severities, in increasing order.
pub fn severity_schedule() -> [f64; 6] {
    [0.0, 0.1, 0.2, 0.4, 0.6, 0.8]
}

/// Apply `spec` to a feature matrix, returning a fresh perturbed copy.
/// Severity 0 returns the input bit-exactly for every kind; the same spec
/// always produces the same output.
pub fn perturb(x: &Tensor, spec: &PerturbationSpec) -> Result<Tensor> {
    if spec.feature_stds.len() != x.cols() {
        return Err(contract(format!(
            "spec carries {} feature stds but the matrix has {} columns",
            spec.feature_stds.len(),
            x.cols()
        )));
    }
    let s = spec.severity;
    if s == 0.0 {
        return Ok(x.clone());
    }
    let (n, d) = (x.rows(), x.cols());
    let mut rng = seeding::substream(spec.seed, "shift", spec.kind.stream_index());
    let mut out = x.clone();
    match spec.kind {
        PerturbationKind::GaussianNoise => {
            for i in 0..n {
                for j in 0..d {
                    let e: f64 = rng.sample(StandardNormal);
                    out.set(i, j, x.at(i, j) + spec.feature_stds[j] * s * e);
                }
            }
        }
        PerturbationKind::FeatureMasking => {
            for v in out.data_mut() {
                if rng.random::<f64>() < s {
                    *v = 0.0;
                }
            }
        }
        PerturbationKind::FeatureScaling => {
            out = x.scale(1.0 + s);
        }
        PerturbationKind::FeaturePermutation => {
            // cells opt in independently with probability s; the selected
            // values are then shuffled among themselves, so each column's
            // value multiset is preserved exactly
            for j in 0..d {
                let mut chosen = Vec::new();
                for i in 0..n {
                    if rng.random::<f64>() < s {
                        chosen.push(i);
                    }
                }
                let mut values: Vec<f64> = chosen.iter().map(|&i| x.at(i, j)).collect();
                values.shuffle(&mut rng);
                for (k, &i) in chosen.iter().enumerate() {
                    out.set(i, j, values[k]);
                }
            }
        }
        PerturbationKind::OutlierInjection => {
            for i in 0..n {
                for j in 0..d {
                    if rng.random::<f64>() < s {
                        let magnitude = 3.0 * spec.feature_stds[j];
                        let delta = if rng.random::<f64>() < 0.5 { magnitude } else { -magnitude };
                        out.set(i, j, x.at(i, j) + delta);
                    }
                }
            }
        }
    }
    Ok(out)
}
