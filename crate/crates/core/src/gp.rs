//! RBF kernel, exact Gaussian process regression, and the Gaussian KL
//! divergence.
//!
//! The kernel is `k(x, x') = sigma_f * exp(-||x - x'||^2 / (2 l^2))` with
//! `sigma_f` entering unsquared as the prior variance scale. Lengthscales
//! are either one shared scalar or per-dimension.

use crate::error::{contract, Result};
use crate::param::{ParamId, ParamStore, Transform};
use crate::stats;
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

/// Kernel hyperparameters registered in a store: `sigma_f` is `[1,1]`,
/// `lengthscale` is `[1,1]` shared or `[1,D]` per-dimension. Both are
/// log-parameterized.
#[derive(Debug, Clone, Copy)]
pub struct RbfParams {
    pub sigma_f: ParamId,
    pub lengthscale: ParamId,
}

impl RbfParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        sigma_f: f64,
        lengthscale: &[f64],
    ) -> Self {
        let sf = store.add(
            &format!("{prefix}.sigma_f"),
            Tensor::scalar(sigma_f),
            Transform::Exp,
            true,
        );
        let ls = store.add(
            &format!("{prefix}.lengthscale"),
            Tensor::row(lengthscale),
            Transform::Exp,
            true,
        );
        RbfParams { sigma_f: sf, lengthscale: ls }
    }
}

/// Dense kernel matrix between two input sets. The direct per-pair loop
/// keeps `K(X, X)` bitwise symmetric.
pub fn rbf_kernel(x1: &Tensor, x2: &Tensor, sigma_f: f64, lengthscale: &[f64]) -> Result<Tensor> {
    let d = x1.cols();
    if x2.cols() != d {
        return Err(contract(format!(
            "kernel inputs disagree on feature dimension: {d} vs {}",
            x2.cols()
        )));
    }
    if lengthscale.len() != 1 && lengthscale.len() != d {
        return Err(contract(format!(
            "lengthscale length {} matches neither 1 nor dimension {d}",
            lengthscale.len()
        )));
    }
    let (n, m) = (x1.rows(), x2.rows());
    let mut k = Tensor::zeros(n, m);
    for i in 0..n {
        let xi = x1.row_slice(i);
        for j in 0..m {
            let xj = x2.row_slice(j);
            let mut d2 = 0.0;
            for t in 0..d {
                let ell = lengthscale[if lengthscale.len() == 1 { 0 } else { t }];
                let diff = (xi[t] - xj[t]) / ell;
                d2 += diff * diff;
            }
            k.data_mut()[i * m + j] = sigma_f * (-0.5 * d2).exp();
        }
    }
    Ok(k)
}

/// Kernel matrix as a tape expression. Either input may be a tape
/// variable (needed when layer inputs are sampled latents); constants
/// should be wrapped with `tape.constant` by the caller.
pub fn rbf_kernel_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    params: RbfParams,
    x1: Var,
    x2: Var,
) -> Var {
    let d = tape.shape(x1).1;
    assert_eq!(tape.shape(x2).1, d, "kernel inputs disagree on feature dimension");
    let ls = tape.param(store, params.lengthscale);
    let shared = tape.shape(ls).1 == 1;

    let scale_inputs = |tape: &mut Tape, x: Var, ls: Var| -> Var {
        if shared {
            let inv = tape.recip(ls);
            tape.scale_by(x, inv)
        } else {
            let inv = tape.recip(ls);
            tape.mul_row(x, inv)
        }
    };
    let xs1 = scale_inputs(tape, x1, ls);
    let xs2 = scale_inputs(tape, x2, ls);

    let sq1 = tape.square(xs1);
    let s1 = tape.sum_axis1(sq1);
    let sq2 = tape.square(xs2);
    let s2 = tape.sum_axis1(sq2);
    let x2t = tape.transpose(xs2);
    let cross = tape.matmul(xs1, x2t);
    let c2 = tape.scale(cross, -2.0);
    let s2row = tape.transpose(s2);
    let with_row = tape.add_row(c2, s2row);
    let d2 = tape.add_col(with_row, s1);

    let e = tape.scale(d2, -0.5);
    let ek = tape.exp(e);
    let sf = tape.param(store, params.sigma_f);
    tape.scale_by(ek, sf)
}

/// Predictive means and variances at a set of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMarginals {
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

impl GaussianMarginals {
    pub fn new(means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        if means.len() != vars.len() {
            return Err(contract("marginal means and variances differ in length"));
        }
        if vars.iter().any(|&v| v <= 0.0) {
            return Err(contract("marginal variances must be positive"));
        }
        Ok(GaussianMarginals { means, vars })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Exact GP regressor with RBF kernel, constant mean, and Gaussian
/// observation noise. Hyperparameters live in the model's own store.
#[derive(Debug, Clone)]
pub struct ExactGp {
    pub store: ParamStore,
    pub kernel: RbfParams,
    /// Observation noise variance (sigma_y^2), log-parameterized.
    pub noise_var: ParamId,
    /// Constant mean c.
    pub mean_c: ParamId,
    x: Tensor,
    y: Tensor,
}

impl ExactGp {
    pub fn new(x: Tensor, y: Tensor, sigma_f: f64, lengthscale: &[f64], noise_var: f64) -> Result<Self> {
        if x.rows() == 0 {
            return Err(contract("exact GP needs at least one training point"));
        }
        if y.rows() != x.rows() || y.cols() != 1 {
            return Err(contract(format!(
                "targets must be [{}, 1], got {:?}",
                x.rows(),
                y.shape()
            )));
        }
        let mut store = ParamStore::new();
        let kernel = RbfParams::register(&mut store, "kernel", sigma_f, lengthscale);
        let noise = store.add("noise_var", Tensor::scalar(noise_var), Transform::Exp, true);
        let c0 = y.data().iter().sum::<f64>() / y.rows() as f64;
        let mean_c = store.add("mean_c", Tensor::scalar(c0), Transform::Identity, true);
        Ok(ExactGp { store, kernel, noise_var: noise, mean_c, x, y })
    }

    pub fn num_points(&self) -> usize {
        self.x.rows()
    }

    pub fn train_inputs(&self) -> &Tensor {
        &self.x
    }

    pub fn train_targets(&self) -> &Tensor {
        &self.y
    }

    /// `log N(y | c 1, K + sigma_y^2 I)` as a differentiable tape node.
    pub fn lml_on_tape(&self, tape: &mut Tape) -> Result<Var> {
        let n = self.x.rows();
        let x = tape.constant(self.x.clone());
        let k = rbf_kernel_on_tape(tape, &self.store, self.kernel, x, x);
        let s2 = tape.param(&self.store, self.noise_var);
        let kn = tape.add_scaled_eye(k, s2);
        let l = tape.cholesky(kn)?;

        let y = tape.constant(self.y.clone());
        let c = tape.param(&self.store, self.mean_c);
        let ones = tape.constant(Tensor::full(n, 1, 1.0));
        let mean_vec = tape.scale_by(ones, c);
        let r = tape.sub(y, mean_vec);

        let a = tape.tri_solve(l, r, false);
        let quad = tape.sum_squares(a);
        let ldiag = tape.diag_part(l);
        let llog = tape.log(ldiag);
        let lsum = tape.sum(llog);
        let logdet = tape.scale(lsum, 2.0);
        let t = tape.add(quad, logdet);
        let t = tape.add_const(t, n as f64 * (2.0 * std::f64::consts::PI).ln());
        Ok(tape.scale(t, -0.5))
    }

    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let v = self.lml_on_tape(&mut tape)?;
        Ok(tape.value(v).scalar_value())
    }

    /// Full-batch Adam on the negative per-point marginal likelihood.
    /// Returns the objective trace.
    pub fn fit(&mut self, steps: usize, lr: f64) -> Result<Vec<f64>> {
        let mut opt = crate::adam::Adam::new(crate::adam::AdamConfig::default());
        let n = self.x.rows() as f64;
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut tape = Tape::new();
            let lml = self.lml_on_tape(&mut tape)?;
            let obj = tape.scale(lml, -1.0 / n);
            trace.push(tape.value(obj).scalar_value());
            let grads = tape.grad(obj)?;
            opt.step(&mut self.store, &grads, lr)?;
        }
        Ok(trace)
    }

    /// Closed-form posterior marginals at query points. With
    /// `observation_space` the noise variance is added to each variance.
    pub fn posterior(&self, xq: &Tensor, observation_space: bool) -> Result<GaussianMarginals> {
        let sf = self.store.value(self.kernel.sigma_f).scalar_value();
        let ls = self.store.value(self.kernel.lengthscale);
        let s2 = self.store.value(self.noise_var).scalar_value();
        let c = self.store.value(self.mean_c).scalar_value();

        let k = rbf_kernel(&self.x, &self.x, sf, ls.data())?;
        let mut kn = k;
        for i in 0..kn.rows() {
            let n = kn.rows();
            kn.data_mut()[i * n + i] += s2;
        }
        let f = tensor::cholesky(&kn)?;
        let r = self.y.map(|v| v - c);
        let alpha = tensor::cholesky_solve(&f.lower, &r);

        let kq = rbf_kernel(&self.x, xq, sf, ls.data())?;
        let v = tensor::solve_lower(&f.lower, &kq, false);

        let q = xq.rows();
        let mut means = Vec::with_capacity(q);
        let mut vars = Vec::with_capacity(q);
        for j in 0..q {
            let mut mu = c;
            for i in 0..self.x.rows() {
                mu += kq.at(i, j) * alpha.data()[i];
            }
            means.push(mu);
            let mut explained = 0.0;
            for i in 0..self.x.rows() {
                explained += v.at(i, j) * v.at(i, j);
            }
            let mut var = (sf - explained).max(1e-12);
            if observation_space {
                var += s2;
            }
            vars.push(var);
        }
        GaussianMarginals::new(means, vars)
    }
}

/// `KL(N(m, L_S L_S^T) || N(m0, K0))` in closed form via Cholesky of K0.
pub fn gaussian_kl(m: &Tensor, l_s: &Tensor, m0: &Tensor, k0: &Tensor) -> Result<f64> {
    let dim = m.rows();
    if m.cols() != 1 || m0.cols() != 1 || m0.rows() != dim {
        return Err(contract("KL means must be matching column vectors"));
    }
    if l_s.rows() != dim || l_s.cols() != dim || k0.rows() != dim || k0.cols() != dim {
        return Err(contract("KL covariance factors must be square of matching size"));
    }
    let f0 = tensor::cholesky(k0)?;
    // trace term: ||L0^-1 L_S||_F^2
    let a = tensor::solve_lower(&f0.lower, l_s, false);
    let trace: f64 = a.data().iter().map(|v| v * v).sum();
    // quadratic term: ||L0^-1 (m - m0)||^2
    let diff = m.sub(m0);
    let b = tensor::solve_lower(&f0.lower, &diff, false);
    let quad: f64 = b.data().iter().map(|v| v * v).sum();
    let logdet_k0: f64 = 2.0 * f0.lower.diag().iter().map(|v| v.ln()).sum::<f64>();
    let logdet_s: f64 = 2.0 * l_s.diag().iter().map(|v| v.ln()).sum::<f64>();
    Ok(0.5 * (trace + quad - dim as f64 + logdet_k0 - logdet_s))
}

/// Log density of a standard normal scaled into `N(mean, var)`, summed
/// over matched slices.
pub fn gaussian_log_density_sum(y: &[f64], means: &[f64], vars: &[f64]) -> f64 {
    y.iter()
        .zip(means)
        .zip(vars)
        .map(|((&yi, &mi), &vi)| stats::gaussian_logpdf(yi, mi, vi))
        .sum()
}
