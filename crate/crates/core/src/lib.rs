//! Core numerics for uncertainty-quantification benchmarking: a
//! reverse-mode tape, Gaussian process building blocks, three model
//! families (sparse variational deep GPs, deterministic quadrature
//! variants, deep ensembles), calibration metrics, covariate-shift
//! perturbations, and Bayesian hyperparameter search.

pub mod adam;
pub mod deepgp;
pub mod dspp;
pub mod ensemble;
pub mod error;
pub mod gp;
pub mod gradcheck;
pub mod hpo;
pub mod likelihood;
pub mod metrics;
pub mod param;
pub mod predictive;
pub mod quadrature;
pub mod seeding;
pub mod shift;
pub mod sobol;
pub mod stats;
pub mod svgp;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use tensor::Tensor;
