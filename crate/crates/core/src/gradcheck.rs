//! Central finite-difference oracle for gradient verification.
//!
//! The oracle perturbs each raw parameter scalar in turn and differences
//! the objective, never touching the reverse-mode path it is used to
//! check. Tests freeze `h = 1e-5` and a relative tolerance of `1e-4`;
//! entries smaller than [`REL_FLOOR`] are compared absolutely so that
//! difference noise on vanishing gradients cannot dominate the ratio.

use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;
use std::collections::HashMap;

pub const DEFAULT_H: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-3;

/// Worst disagreement found by [`max_rel_err`].
#[derive(Debug, Clone)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
    pub entries_checked: usize,
}

impl CheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Central finite differences of `f` with respect to every trainable raw
/// scalar in the store. The store is restored to its entry state.
pub fn fd_gradient<F>(store: &mut ParamStore, mut f: F, h: f64) -> HashMap<ParamId, Tensor>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut out = HashMap::new();
    for id in store.trainable_ids() {
        let len = store.raw(id).len();
        let (rows, cols) = (store.raw(id).shape()[0], store.raw(id).shape()[1]);
        let mut g = Tensor::zeros(rows, cols);
        for k in 0..len {
            let orig = store.raw(id).data()[k];
            store.raw_mut(id).data_mut()[k] = orig + h;
            let fp = f(store);
            store.raw_mut(id).data_mut()[k] = orig - h;
            let fm = f(store);
            store.raw_mut(id).data_mut()[k] = orig;
            g.data_mut()[k] = (fp - fm) / (2.0 * h);
        }
        out.insert(id, g);
    }
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Largest entrywise relative error between analytic and finite-difference
/// gradients. A parameter missing on the analytic side counts as zero.
pub fn max_rel_err(
    store: &ParamStore,
    analytic: &HashMap<ParamId, Tensor>,
    fd: &HashMap<ParamId, Tensor>,
) -> CheckReport {
    let mut report = CheckReport { max_rel_err: 0.0, worst: None, entries_checked: 0 };
    for (&id, fd_g) in fd {
        let zero;
        let a_g = match analytic.get(&id) {
            Some(t) => t,
            None => {
                zero = Tensor::zeros(fd_g.shape()[0], fd_g.shape()[1]);
                &zero
            }
        };
        assert_eq!(a_g.shape(), fd_g.shape(), "gradient shape mismatch for {}", store.name(id));
        for k in 0..fd_g.len() {
            let (a, b) = (a_g.data()[k], fd_g.data()[k]);
            let e = rel_err(a, b);
            report.entries_checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some(Mismatch {
                    param: store.name(id).to_string(),
                    index: k,
                    analytic: a,
                    fd: b,
                    rel_err: e,
                });
            }
        }
    }
    report
}
