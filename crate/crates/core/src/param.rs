//! Named, trainable parameter storage shared by all models.
//!
//! Positive quantities (lengthscales, variances, noise) are stored in log
//! space and exponentiated on the tape, so optimizers always work on
//! unconstrained values.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Stable handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Mapping from the stored raw tensor to the value models consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// Raw values live in log space; the constrained value is `exp(raw)`.
    Exp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Parameter {
    name: String,
    raw: Tensor,
    transform: Transform,
    trainable: bool,
}

/// Flat collection of model parameters addressed by [`ParamId`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter with its constrained initial value. For the
    /// `Exp` transform the value must be strictly positive; the raw tensor
    /// stores its log.
    pub fn add(&mut self, name: &str, value: Tensor, transform: Transform, trainable: bool) -> ParamId {
        let raw = match transform {
            Transform::Identity => value,
            Transform::Exp => {
                assert!(
                    value.data().iter().all(|&x| x > 0.0),
                    "parameter {name} needs positive init for the exp transform"
                );
                value.map(f64::ln)
            }
        };
        self.params.push(Parameter {
            name: name.to_string(),
            raw,
            transform,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn transform(&self, id: ParamId) -> Transform {
        self.params[id.0].transform
    }

    pub fn trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn raw(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].raw
    }

    pub fn raw_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].raw
    }

    pub fn set_raw(&mut self, id: ParamId, raw: Tensor) {
        assert_eq!(self.params[id.0].raw.shape(), raw.shape(), "set_raw shape mismatch");
        self.params[id.0].raw = raw;
    }

    /// Constrained value (`exp(raw)` for the `Exp` transform).
    pub fn value(&self, id: ParamId) -> Tensor {
        let p = &self.params[id.0];
        match p.transform {
            Transform::Identity => p.raw.clone(),
            Transform::Exp => p.raw.map(f64::exp),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.trainable(id)).collect()
    }

    /// Total scalar count across trainable raw tensors.
    pub fn num_trainable_scalars(&self) -> usize {
        self.trainable_ids().iter().map(|&id| self.raw(id).len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Copy of every raw tensor, for snapshot/rollback.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.raw.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot length mismatch");
        for (p, raw) in self.params.iter_mut().zip(snapshot) {
            p.raw = raw.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_transform_round_trips() {
        let mut store = ParamStore::new();
        let id = store.add("noise", Tensor::scalar(0.5), Transform::Exp, true);
        assert!((store.raw(id).scalar_value() - 0.5f64.ln()).abs() < 1e-15);
        assert!((store.value(id).scalar_value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_transform_passes_through() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::col(&[1.0, -2.0]), Transform::Identity, true);
        assert_eq!(store.value(id), Tensor::col(&[1.0, -2.0]));
    }

    #[test]
    fn snapshot_restore_round_trips() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0), Transform::Identity, true);
        let snap = store.snapshot();
        store.set_raw(id, Tensor::scalar(9.0));
        store.restore(&snap);
        assert_eq!(store.raw(id).scalar_value(), 1.0);
    }

    #[test]
    fn serde_round_trips() {
        let mut store = ParamStore::new();
        store.add("lengthscale", Tensor::scalar(2.0), Transform::Exp, true);
        store.add("mean", Tensor::scalar(0.3), Transform::Identity, false);
        let json = serde_json::to_string(&store).unwrap();
        let back: ParamStore = serde_json::from_str(&json).unwrap();
        let id = back.find("lengthscale").unwrap();
        assert!((back.value(id).scalar_value() - 2.0).abs() < 1e-15);
        assert!(!back.trainable(back.find("mean").unwrap()));
    }
}
