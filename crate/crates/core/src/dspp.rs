//! Deep Sigma Point Process: hidden-layer integrals are replaced by a
//! learnable quadrature rule, so the predictive is an exact Q-component
//! Gaussian mixture and the training objective is a regularized
//! maximum-likelihood score with no sampling anywhere.

use crate::deepgp::{build_layers, class_indices};
use crate::error::{contract, Result};
use crate::gp::GaussianMarginals;
use crate::likelihood::TaskKind;
use crate::param::{ParamId, ParamStore, Transform};
use crate::predictive::Predictive;
use crate::quadrature;
use crate::stats;
use crate::svgp::SvgpLayer;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default number of quadrature sites.
pub const DEFAULT_SITES: usize = 8;

/// Deep GP stack with learnable per-layer quadrature sites and global
/// mixture weights.
#[derive(Debug, Clone)]
pub struct Dspp {
    pub store: ParamStore,
    pub layers: Vec<SvgpLayer>,
    pub task: TaskKind,
    pub beta: f64,
    /// Observation noise variance (regression only).
    pub noise_var: Option<ParamId>,
    /// Constant output mean (regression only).
    pub mean_c: Option<ParamId>,
    /// Per-hidden-layer site vectors, each `[1, Q]`.
    pub sites: Vec<ParamId>,
    /// Global weight logits `[1, Q]`; weights are their softmax.
    pub weight_logits: ParamId,
    pub num_sites: usize,
}

fn register_quadrature(
    store: &mut ParamStore,
    hidden_layers: usize,
    q: usize,
) -> Result<(Vec<ParamId>, ParamId)> {
    if q < 1 {
        return Err(contract("need at least one quadrature site"));
    }
    let (nodes, weights) = quadrature::standard_normal_rule(q);
    let xi = Tensor::row(&nodes);
    let rho = Tensor::row(&weights.iter().map(|w| w.ln()).collect::<Vec<_>>());
    let sites = (0..hidden_layers)
        .map(|l| store.add(&format!("quad.xi{l}"), xi.clone(), Transform::Identity, true))
        .collect();
    let weight_logits = store.add("quad.rho", rho, Transform::Identity, true);
    Ok((sites, weight_logits))
}

impl Dspp {
    pub fn new_regression(
        x_train: &Tensor,
        y_train: &Tensor,
        hidden: &[usize],
        num_inducing: usize,
        q: usize,
        seed: u64,
    ) -> Result<Self> {
        if x_train.rows() == 0 {
            return Err(contract("DSPP needs at least one training point"));
        }
        if y_train.rows() != x_train.rows() || y_train.cols() != 1 {
            return Err(contract("regression targets must be a single column"));
        }
        let mut dims = vec![x_train.cols()];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut store = ParamStore::new();
        let layers = build_layers(&mut store, x_train, &dims, num_inducing, seed)?;
        let (sites, weight_logits) = register_quadrature(&mut store, hidden.len(), q)?;
        let y_bar = y_train.sum() / y_train.rows() as f64;
        let mean_c = store.add("mean_c", Tensor::scalar(y_bar), Transform::Identity, true);
        let noise_var = store.add("noise_var", Tensor::scalar(0.1), Transform::Exp, true);
        Ok(Dspp {
            store,
            layers,
            task: TaskKind::Regression,
            beta: 1.0,
            noise_var: Some(noise_var),
            mean_c: Some(mean_c),
            sites,
            weight_logits,
            num_sites: q,
        })
    }

    pub fn new_classification(
        x_train: &Tensor,
        classes: usize,
        hidden: &[usize],
        num_inducing: usize,
        q: usize,
        seed: u64,
    ) -> Result<Self> {
        if x_train.rows() == 0 {
            return Err(contract("DSPP needs at least one training point"));
        }
        if classes < 2 {
            return Err(contract("classification needs at least two classes"));
        }
        let mut dims = vec![x_train.cols()];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let mut store = ParamStore::new();
        let layers = build_layers(&mut store, x_train, &dims, num_inducing, seed)?;
        let (sites, weight_logits) = register_quadrature(&mut store, hidden.len(), q)?;
        Ok(Dspp {
            store,
            layers,
            task: TaskKind::Classification { classes },
            beta: 1.0,
            noise_var: None,
            mean_c: None,
            sites,
            weight_logits,
            num_sites: q,
        })
    }

    /// Mixture weights `omega = softmax(rho)`.
    pub fn weights(&self) -> Vec<f64> {
        crate::likelihood::softmax_probs(self.store.raw(self.weight_logits).data())
    }

    /// Deterministic path at site `j` without a tape: final-layer
    /// marginals `(mean, var)`, both `[B, W]`, in latent space.
    fn component_plain(&self, x: &Tensor, j: usize) -> Result<(Tensor, Tensor)> {
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let (mean, var) = layer.marginals_plain(&self.store, &h)?;
            if l + 1 == self.layers.len() {
                return Ok((mean, var));
            }
            let xi = self.store.raw(self.sites[l]).data()[j];
            h = mean.add(&var.map(f64::sqrt).scale(xi));
        }
        unreachable!("model has at least one layer");
    }

    /// All Q components without a tape: latent final-layer marginals per
    /// site (for classification the means are the component logits).
    pub fn components_plain(&self, x: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
        (0..self.num_sites).map(|j| self.component_plain(x, j)).collect()
    }

    /// Path at site `j` on the tape.
    fn component_on_tape(&self, tape: &mut Tape, x: Var, j: usize) -> Result<(Var, Var)> {
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let (mean, var) = layer.marginals_on_tape(tape, &self.store, h)?;
            if l + 1 == self.layers.len() {
                return Ok((mean, var));
            }
            let site_row = tape.param(&self.store, self.sites[l]);
            let xi = tape.pick_per_row(site_row, &[j]);
            let sd = tape.sqrt(var);
            let shift = tape.scale_by(sd, xi);
            h = tape.add(mean, shift);
        }
        unreachable!("model has at least one layer");
    }

    /// Log mixture weights on the tape: `rho - logsumexp(rho)`, `[1, Q]`.
    fn log_weights_on_tape(&self, tape: &mut Tape) -> Var {
        let rho = tape.param(&self.store, self.weight_logits);
        let lse = tape.logsumexp_rows(rho);
        let ones = tape.constant(Tensor::full(1, self.num_sites, 1.0));
        let spread = tape.scale_by(ones, lse);
        tape.sub(rho, spread)
    }

    /// Per-point, per-component log density columns stacked to `[B, Q]`.
    fn component_log_density_matrix(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        y: &Tensor,
    ) -> Result<Var> {
        let b = x.rows();
        let xc = tape.constant(x.clone());
        let mut cols = Vec::with_capacity(self.num_sites);
        match self.task {
            TaskKind::Regression => {
                let noise_var = self.noise_var.expect("regression model has a noise parameter");
                let mean_c = self.mean_c.expect("regression model has a constant mean");
                let yc = tape.constant(y.clone());
                let ones = tape.constant(Tensor::full(b, 1, 1.0));
                let s2 = tape.param(&self.store, noise_var);
                let s2_col = tape.scale_by(ones, s2);
                let c = tape.param(&self.store, mean_c);
                let c_col = tape.scale_by(ones, c);
                for j in 0..self.num_sites {
                    let (mean, var) = self.component_on_tape(tape, xc, j)?;
                    let mean_total = tape.add(mean, c_col);
                    let vt = tape.add(var, s2_col);
                    let diff = tape.sub(yc, mean_total);
                    let sq = tape.square(diff);
                    let inv = tape.recip(vt);
                    let ratio = tape.mul(sq, inv);
                    let lv = tape.log(vt);
                    let t = tape.add(lv, ratio);
                    let t = tape.add_const(t, stats::LN_2PI);
                    cols.push(tape.scale(t, -0.5));
                }
            }
            TaskKind::Classification { classes } => {
                let labels = class_indices(y, classes)?;
                for j in 0..self.num_sites {
                    let (logits, _) = self.component_on_tape(tape, xc, j)?;
                    let lse = tape.logsumexp_rows(logits);
                    let pick = tape.pick_per_row(logits, &labels);
                    cols.push(tape.sub(pick, lse));
                }
            }
        }
        Ok(tape.concat_cols(&cols))
    }

    /// Regularized maximum-likelihood objective on a mini-batch:
    /// `sum_i log sum_j omega_j p_j(y_i | x_i) * (n_total / batch)`
    /// minus `beta` times the total KL. Fully deterministic.
    pub fn objective(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        y: &Tensor,
        n_total: usize,
    ) -> Result<Var> {
        let b = x.rows();
        if b == 0 {
            return Err(contract("objective batch must be nonempty"));
        }
        if y.rows() != b || y.cols() != 1 {
            return Err(contract(format!("targets must be [{b}, 1], got {:?}", y.shape())));
        }
        let mat = self.component_log_density_matrix(tape, x, y)?;
        let logw = self.log_weights_on_tape(tape);
        let shifted = tape.add_row(mat, logw);
        let per_point = tape.logsumexp_rows(shifted);
        let total = tape.sum(per_point);
        let scaled = tape.scale(total, n_total as f64 / b as f64);
        let kl = self.kl_on_tape(tape);
        let kl_scaled = tape.scale(kl, self.beta);
        Ok(tape.sub(scaled, kl_scaled))
    }

    /// Total KL over every layer's inducing distributions.
    pub fn kl_on_tape(&self, tape: &mut Tape) -> Var {
        let mut total: Option<Var> = None;
        for layer in &self.layers {
            let k = layer.kl_on_tape(tape, &self.store);
            total = Some(match total {
                Some(acc) => tape.add(acc, k),
                None => k,
            });
        }
        total.expect("model has at least one layer")
    }

    /// Predictive distribution. Regression: exact Q-component mixture in
    /// observation space. Classification: weight-averaged softmax of the
    /// component logits.
    pub fn predict(&self, x: &Tensor) -> Result<Predictive> {
        let weights = self.weights();
        let comps = self.components_plain(x)?;
        match self.task {
            TaskKind::Regression => {
                let c = self.mean_c.map_or(0.0, |id| self.store.value(id).scalar_value());
                let s2 = self
                    .noise_var
                    .map_or(0.0, |id| self.store.value(id).scalar_value());
                let comps: Result<Vec<GaussianMarginals>> = comps
                    .iter()
                    .map(|(mean, var)| {
                        GaussianMarginals::new(
                            mean.data().iter().map(|&m| m + c).collect(),
                            var.data().iter().map(|&v| v + s2).collect(),
                        )
                    })
                    .collect();
                Predictive::mixture(weights, comps?)
            }
            TaskKind::Classification { classes } => {
                let b = x.rows();
                let mut probs = Tensor::zeros(b, classes);
                for (w, (logits, _)) in weights.iter().zip(&comps) {
                    for i in 0..b {
                        let p = crate::likelihood::softmax_probs(logits.row_slice(i));
                        for k in 0..classes {
                            probs.data_mut()[i * classes + k] += w * p[k];
                        }
                    }
                }
                Ok(Predictive::Categorical(probs))
            }
        }
    }

    /// Per-point log predictive density of scalar targets (regression) or
    /// class labels (classification).
    pub fn log_density(&self, x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
        if y.rows() != x.rows() || y.cols() != 1 {
            return Err(contract("targets must be a single column"));
        }
        match self.task {
            TaskKind::Regression => self.predict(x)?.log_density(y.data()),
            TaskKind::Classification { classes } => {
                let labels = class_indices(y, classes)?;
                let probs = self.predict(x)?;
                let probs = probs.class_probs()?;
                Ok(labels.iter().enumerate().map(|(i, &k)| probs.at(i, k).ln()).collect())
            }
        }
    }
}
