//! Sparse variational GP layer: whitened inducing-point posterior,
//! predictive marginals, and the single-layer ELBO.
//!
//! Each unit keeps a variational distribution `q(v) = N(m, L_S L_S^T)`
//! over whitened inducing values `v = L_K^{-1} u`. With
//! `A = L_K^{-1} K_ZX`, the marginal at input x is
//! `N(A^T m, k(x,x) - ||a_x||^2 + ||L_S^T a_x||^2)`, and
//! `KL(q || p)` reduces to the KL against a standard normal.

use crate::error::{contract, Result};
use crate::gp::{rbf_kernel, rbf_kernel_on_tape, RbfParams};
use crate::param::{ParamId, ParamStore, Transform};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

/// Floor added to predictive variances so downstream square roots and
/// logs stay well-defined under cancellation.
const VAR_FLOOR: f64 = 1e-12;

/// One GP unit: kernel hyperparameters plus whitened variational state.
#[derive(Debug, Clone, Copy)]
pub struct GpUnit {
    pub kernel: RbfParams,
    /// Inducing locations Z, `[M, D_in]`.
    pub z: ParamId,
    /// Whitened variational mean, `[M, 1]`.
    pub m_v: ParamId,
    /// Raw lower factor: strict lower triangle used as-is, diagonal
    /// exponentiated, so `L_S` always has positive diagonal.
    pub l_raw: ParamId,
}

/// A width-H layer of independent SVGP units over a shared input space.
#[derive(Debug, Clone)]
pub struct SvgpLayer {
    pub units: Vec<GpUnit>,
    pub input_dim: usize,
    pub num_inducing: usize,
    /// Fixed linear mean `[D_in, H]` (identity skip for hidden layers);
    /// `None` means zero mean.
    pub skip_mean: Option<Tensor>,
}

/// Truncated-identity projection used as the hidden-layer skip mean.
pub fn identity_projection(d_in: usize, width: usize) -> Tensor {
    let mut p = Tensor::zeros(d_in, width);
    for i in 0..d_in.min(width) {
        p.data_mut()[i * width + i] = 1.0;
    }
    p
}

impl SvgpLayer {
    /// Register a fresh layer in the store. `z_init` is `[M, input_dim]`
    /// and is copied into every unit.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        width: usize,
        z_init: &Tensor,
        sigma_f: f64,
        lengthscale: &[f64],
        skip_mean: Option<Tensor>,
    ) -> Result<Self> {
        if width < 1 {
            return Err(contract("layer width must be at least 1"));
        }
        if z_init.cols() != input_dim || z_init.rows() < 1 {
            return Err(contract(format!(
                "inducing init must be [M>=1, {input_dim}], got {:?}",
                z_init.shape()
            )));
        }
        if let Some(p) = &skip_mean {
            if p.rows() != input_dim || p.cols() != width {
                return Err(contract("skip mean projection shape mismatch"));
            }
        }
        let m = z_init.rows();
        let mut units = Vec::with_capacity(width);
        for h in 0..width {
            let name = format!("{prefix}.u{h}");
            let kernel = RbfParams::register(store, &name, sigma_f, lengthscale);
            let z = store.add(&format!("{name}.z"), z_init.clone(), Transform::Identity, true);
            let m_v = store.add(&format!("{name}.m"), Tensor::zeros(m, 1), Transform::Identity, true);
            let mut l0 = Tensor::zeros(m, m);
            for i in 0..m {
                l0.data_mut()[i * m + i] = 1e-3f64.ln();
            }
            let l_raw = store.add(&format!("{name}.l"), l0, Transform::Identity, true);
            units.push(GpUnit { kernel, z, m_v, l_raw });
        }
        Ok(SvgpLayer { units, input_dim, num_inducing: m, skip_mean })
    }

    pub fn width(&self) -> usize {
        self.units.len()
    }

    /// Materialize the lower factor `L_S` of one unit on the tape.
    fn l_s_on_tape(&self, tape: &mut Tape, store: &ParamStore, unit: &GpUnit) -> Var {
        let m = self.num_inducing;
        let raw = tape.param(store, unit.l_raw);
        let mut mask = Tensor::zeros(m, m);
        for i in 0..m {
            for j in 0..i {
                mask.data_mut()[i * m + j] = 1.0;
            }
        }
        let mask = tape.constant(mask);
        let strict = tape.mul(raw, mask);
        let d = tape.diag_part(raw);
        let e = tape.exp(d);
        let de = tape.diag_embed(e);
        tape.add(strict, de)
    }

    fn l_s_plain(&self, store: &ParamStore, unit: &GpUnit) -> Tensor {
        let m = self.num_inducing;
        let raw = store.raw(unit.l_raw);
        let mut l = Tensor::zeros(m, m);
        for i in 0..m {
            for j in 0..i {
                l.data_mut()[i * m + j] = raw.at(i, j);
            }
            l.data_mut()[i * m + i] = raw.at(i, i).exp();
        }
        l
    }

    /// Per-unit predictive marginals as tape nodes: means and variances,
    /// each `[B, H]`. `x` may be a constant or an upstream layer output.
    pub fn marginals_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
    ) -> Result<(Var, Var)> {
        let (b, d) = tape.shape(x);
        if d != self.input_dim {
            return Err(contract(format!(
                "layer expects {}-dimensional inputs, got {d}",
                self.input_dim
            )));
        }
        let mut means = Vec::with_capacity(self.width());
        let mut vars = Vec::with_capacity(self.width());
        for unit in &self.units {
            let z = tape.param(store, unit.z);
            let kzz = rbf_kernel_on_tape(tape, store, unit.kernel, z, z);
            let lk = tape.cholesky(kzz)?;
            let kzx = rbf_kernel_on_tape(tape, store, unit.kernel, z, x);
            let a = tape.tri_solve(lk, kzx, false);

            let m_v = tape.param(store, unit.m_v);
            let at = tape.transpose(a);
            let mean_h = tape.matmul(at, m_v);

            let l_s = self.l_s_on_tape(tape, store, unit);
            let lst = tape.transpose(l_s);
            let bmat = tape.matmul(lst, a);
            let asq = tape.square(a);
            let s1 = tape.sum_axis0(asq);
            let bsq = tape.square(bmat);
            let s2 = tape.sum_axis0(bsq);
            let ones = tape.constant(Tensor::full(1, b, 1.0));
            let sf = tape.param(store, unit.kernel.sigma_f);
            let kdiag = tape.scale_by(ones, sf);
            let gap = tape.sub(s2, s1);
            let var_row = tape.add(kdiag, gap);
            let var_row = tape.add_const(var_row, VAR_FLOOR);
            let var_h = tape.transpose(var_row);

            means.push(mean_h);
            vars.push(var_h);
        }
        let mut mean = tape.concat_cols(&means);
        let var = tape.concat_cols(&vars);
        if let Some(p) = &self.skip_mean {
            let pc = tape.constant(p.clone());
            let skip = tape.matmul(x, pc);
            mean = tape.add(mean, skip);
        }
        Ok((mean, var))
    }

    /// Predictive marginals without a tape, for frozen-model prediction.
    /// Matches the tape path to floating-point noise.
    pub fn marginals_plain(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Tensor)> {
        if x.cols() != self.input_dim {
            return Err(contract(format!(
                "layer expects {}-dimensional inputs, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        let b = x.rows();
        let h = self.width();
        let mut mean = Tensor::zeros(b, h);
        let mut var = Tensor::zeros(b, h);
        for (hidx, unit) in self.units.iter().enumerate() {
            let sf = store.value(unit.kernel.sigma_f).scalar_value();
            let ls = store.value(unit.kernel.lengthscale);
            let z = store.value(unit.z);
            let kzz = rbf_kernel(&z, &z, sf, ls.data())?;
            let f = tensor::cholesky(&kzz)?;
            let kzx = rbf_kernel(&z, x, sf, ls.data())?;
            let a = tensor::solve_lower(&f.lower, &kzx, false);
            let m_v = store.value(unit.m_v);
            let l_s = self.l_s_plain(store, unit);
            let bmat = l_s.transpose().matmul(&a);
            let m = self.num_inducing;
            for j in 0..b {
                let mut mu = 0.0;
                for i in 0..m {
                    mu += a.at(i, j) * m_v.data()[i];
                }
                mean.data_mut()[j * h + hidx] = mu;
                let mut gap = 0.0;
                for i in 0..m {
                    gap += bmat.at(i, j) * bmat.at(i, j) - a.at(i, j) * a.at(i, j);
                }
                var.data_mut()[j * h + hidx] = (sf + gap + VAR_FLOOR).max(VAR_FLOOR);
            }
        }
        if let Some(p) = &self.skip_mean {
            let skip = x.matmul(p);
            mean = mean.add(&skip);
        }
        Ok((mean, var))
    }

    /// Whitened KL `sum_h KL(q_h(v) || N(0, I))` as a tape node. The log
    /// determinant of S uses the raw diagonal directly (`log exp = id`).
    pub fn kl_on_tape(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        let m = self.num_inducing as f64;
        let mut total: Option<Var> = None;
        for unit in &self.units {
            let m_v = tape.param(store, unit.m_v);
            let raw = tape.param(store, unit.l_raw);
            let l_s = self.l_s_on_tape(tape, store, unit);
            let lsq = tape.sum_squares(l_s);
            let msq = tape.sum_squares(m_v);
            let t = tape.add(lsq, msq);
            let t = tape.scale(t, 0.5);
            let t = tape.add_const(t, -0.5 * m);
            let rd = tape.diag_part(raw);
            let dsum = tape.sum(rd);
            let kl_h = tape.sub(t, dsum);
            total = Some(match total {
                Some(acc) => tape.add(acc, kl_h),
                None => kl_h,
            });
        }
        total.expect("layer has at least one unit")
    }
}

/// Single-layer SVGP ELBO with a Gaussian likelihood. The expected
/// log-likelihood uses the closed form
/// `log N(y | mu_i, sigma_y^2) - var_i / (2 sigma_y^2)`, scaled by
/// `n_total / batch` for mini-batching; the KL term is scaled by `beta`.
pub fn svgp_elbo_gaussian(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &SvgpLayer,
    x: &Tensor,
    y: &Tensor,
    noise_var: ParamId,
    mean_c: Option<ParamId>,
    n_total: usize,
    beta: f64,
) -> Result<Var> {
    let b = x.rows();
    if b == 0 {
        return Err(contract("ELBO batch must be nonempty"));
    }
    if layer.width() != 1 {
        return Err(contract("Gaussian ELBO wants an output layer of width 1"));
    }
    if y.rows() != b || y.cols() != 1 {
        return Err(contract(format!("targets must be [{b}, 1], got {:?}", y.shape())));
    }
    let xc = tape.constant(x.clone());
    let (mean, var) = layer.marginals_on_tape(tape, store, xc)?;
    let ell = gaussian_expected_loglik(tape, store, mean, var, y, noise_var, mean_c, b);
    let scaled = tape.scale(ell, n_total as f64 / b as f64);
    let kl = layer.kl_on_tape(tape, store);
    let kl_scaled = tape.scale(kl, beta);
    Ok(tape.sub(scaled, kl_scaled))
}

/// Batch sum of the closed-form Gaussian expected log-likelihood given
/// latent marginals `(mean, var)`, both `[B, 1]`.
pub(crate) fn gaussian_expected_loglik(
    tape: &mut Tape,
    store: &ParamStore,
    mean: Var,
    var: Var,
    y: &Tensor,
    noise_var: ParamId,
    mean_c: Option<ParamId>,
    b: usize,
) -> Var {
    let mut mean = mean;
    if let Some(c) = mean_c {
        let cv = tape.param(store, c);
        let ones = tape.constant(Tensor::full(b, 1, 1.0));
        let cvec = tape.scale_by(ones, cv);
        mean = tape.add(mean, cvec);
    }
    let yc = tape.constant(y.clone());
    let diff = tape.sub(yc, mean);
    let quad = tape.sum_squares(diff);
    let vsum = tape.sum(var);
    let s2 = tape.param(store, noise_var);
    let two_s2 = tape.scale(s2, 2.0);
    let inv = tape.recip(two_s2);
    let qv = tape.add(quad, vsum);
    let penalty = tape.mul(qv, inv);
    let ls2 = tape.log(s2);
    let t1 = tape.scale(ls2, -0.5 * b as f64);
    let t = tape.sub(t1, penalty);
    tape.add_const(t, -0.5 * b as f64 * (2.0 * std::f64::consts::PI).ln())
}
