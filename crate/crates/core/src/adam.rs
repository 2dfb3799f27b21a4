//! Adam optimizer over a [`ParamStore`].

use crate::error::{contract, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::Gradients;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment accumulators, keyed by parameter id.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: HashMap<ParamId, Tensor>,
    v: HashMap<ParamId, Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, m: HashMap::new(), v: HashMap::new(), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every trainable parameter that received a gradient.
    /// The step counter advances exactly once per call.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for id in store.trainable_ids() {
            let g = match grads.param(id) {
                Some(g) => g,
                None => continue,
            };
            let raw_shape = store.raw(id).shape().to_vec();
            if g.shape() != raw_shape.as_slice() {
                return Err(contract(format!(
                    "gradient shape {:?} does not match parameter {} shape {:?}",
                    g.shape(),
                    store.name(id),
                    raw_shape
                )));
            }
            let m = self
                .m
                .entry(id)
                .or_insert_with(|| Tensor::zeros(raw_shape[0], raw_shape[1]));
            *m = m.scale(self.cfg.beta1).add(&g.scale(1.0 - self.cfg.beta1));
            let v = self
                .v
                .entry(id)
                .or_insert_with(|| Tensor::zeros(raw_shape[0], raw_shape[1]));
            *v = v
                .scale(self.cfg.beta2)
                .add(&g.mul_elem(g).scale(1.0 - self.cfg.beta2));

            let m = &self.m[&id];
            let v = &self.v[&id];
            let raw = store.raw_mut(id);
            for k in 0..raw.len() {
                let mhat = m.data()[k] / b1t;
                let vhat = v.data()[k] / b2t;
                raw.data_mut()[k] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Transform;
    use crate::tape::Tape;

    fn grads_for(store: &ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> crate::tape::Var) -> Gradients {
        let mut tape = Tape::new();
        let out = f(&mut tape, store);
        tape.grad(out).unwrap()
    }

    #[test]
    fn first_step_is_signed_unit_step_scaled_by_lr() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.0), Transform::Identity, true);
        let g = grads_for(&store, |tape, s| {
            let xv = tape.param(s, x);
            tape.scale(xv, 4.0)
        });
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut store, &g, 0.1).unwrap();
        // mhat = g, vhat = g^2, so the move is lr * g / (|g| + eps') ~ lr
        assert!((store.raw(x).scalar_value() - 0.9).abs() < 1e-6);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::col(&[2.0, -3.0]), Transform::Identity, true);
        let g = grads_for(&store, |tape, s| {
            let xv = tape.param(s, x);
            let z = tape.scale(xv, 0.0);
            tape.sum(z)
        });
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut store, &g, 0.1).unwrap();
        assert_eq!(store.raw(x), &Tensor::col(&[2.0, -3.0]));
    }

    #[test]
    fn descends_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(5.0), Transform::Identity, true);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            let g = grads_for(&store, |tape, s| {
                let xv = tape.param(s, x);
                let d = tape.add_const(xv, -2.0);
                tape.square(d)
            });
            opt.step(&mut store, &g, 0.05).unwrap();
        }
        assert!((store.raw(x).scalar_value() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn untrainable_parameters_never_move() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(1.0), Transform::Identity, true);
        let c = store.add("c", Tensor::scalar(7.0), Transform::Identity, false);
        let g = grads_for(&store, |tape, s| {
            let xv = tape.param(s, x);
            let cv = tape.param(s, c);
            let p = tape.mul(xv, cv);
            tape.square(p)
        });
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut store, &g, 0.1).unwrap();
        assert_eq!(store.raw(c).scalar_value(), 7.0);
        assert!(store.raw(x).scalar_value() < 1.0);
    }
}
