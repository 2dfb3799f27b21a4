//! Deep-ensemble baseline: independently initialized dual-output MLPs
//! trained per member (Gaussian NLL for regression, cross entropy on mean
//! logits for classification) and aggregated as an equal-weight mixture.

use crate::error::{contract, Result};
use crate::gp::GaussianMarginals;
use crate::likelihood::TaskKind;
use crate::param::{ParamId, ParamStore, Transform};
use crate::predictive::Predictive;
use crate::seeding;
use crate::stats;
use crate::tape::{self, Tape, Var};
use crate::tensor::Tensor;
use crate::train::{self, EpochRecord, TrainConfig};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Floor added to materialized variances so densities stay finite.
const VAR_FLOOR: f64 = 1e-6;

/// Default logit samples per member during classification inference.
pub const DEFAULT_CLASSIFY_SAMPLES: usize = 100;

/// One dual-output MLP: rectifier hidden layers, linear output of width
/// 2T holding the mean block then the raw-variance block (T targets:
/// 1 for regression, C for classification).
#[derive(Debug, Clone)]
pub struct MlpMember {
    pub store: ParamStore,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
    pub sizes: Vec<usize>,
    pub task: TaskKind,
}

impl MlpMember {
    pub fn new(input_dim: usize, hidden: &[usize], task: TaskKind, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(contract("member needs at least one input feature"));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(contract("hidden widths must be positive"));
        }
        let out_width = 2 * task.output_width();
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(out_width);
        let mut store = ParamStore::new();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut rng = seeding::substream(seed, "mlp-init", 0);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Tensor::zeros(fan_in, fan_out);
            for v in w.data_mut() {
                *v = (2.0 * rng.random::<f64>() - 1.0) * bound;
            }
            weights.push(store.add(&format!("w{l}"), w, Transform::Identity, true));
            biases.push(store.add(
                &format!("b{l}"),
                Tensor::zeros(1, fan_out),
                Transform::Identity,
                true,
            ));
        }
        Ok(MlpMember { store, weights, biases, sizes, task })
    }

    fn targets(&self) -> usize {
        self.task.output_width()
    }

    /// Network pass on the tape: `(mean, variance)`, both `[B, T]`.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let mut h = x;
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let w = tape.param(&self.store, self.weights[l]);
            let b = tape.param(&self.store, self.biases[l]);
            let z = tape.matmul(h, w);
            let z = tape.add_row(z, b);
            h = if l < last { tape.relu(z) } else { z };
        }
        let t = self.targets();
        let mut sel_mu = Tensor::zeros(2 * t, t);
        let mut sel_raw = Tensor::zeros(2 * t, t);
        for j in 0..t {
            sel_mu.data_mut()[j * t + j] = 1.0;
            sel_raw.data_mut()[(t + j) * t + j] = 1.0;
        }
        let sel_mu = tape.constant(sel_mu);
        let sel_raw = tape.constant(sel_raw);
        let mu = tape.matmul(h, sel_mu);
        let raw = tape.matmul(h, sel_raw);
        let sp = tape.softplus(raw);
        let var = tape.add_const(sp, VAR_FLOOR);
        (mu, var)
    }

    /// Network pass without a tape; matches the tape path bitwise.
    pub fn forward_plain(&self, x: &Tensor) -> (Tensor, Tensor) {
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let w = self.store.raw(self.weights[l]);
            let b = self.store.raw(self.biases[l]);
            let mut z = h.matmul(w);
            for i in 0..z.rows() {
                for j in 0..z.cols() {
                    let v = z.at(i, j) + b.data()[j];
                    z.set(i, j, if l < last { v.max(0.0) } else { v });
                }
            }
            h = z;
        }
        let t = self.targets();
        let b = h.rows();
        let mut mu = Tensor::zeros(b, t);
        let mut var = Tensor::zeros(b, t);
        for i in 0..b {
            for j in 0..t {
                mu.set(i, j, h.at(i, j));
                var.set(i, j, tape::softplus(h.at(i, j + t)) + VAR_FLOOR);
            }
        }
        (mu, var)
    }

    /// Batch-summed Gaussian negative log-likelihood of the dual outputs.
    pub fn regression_loss(&self, tape: &mut Tape, x: &Tensor, y: &Tensor) -> Result<Var> {
        if self.task != TaskKind::Regression {
            return Err(contract("regression loss on a classification member"));
        }
        if y.rows() != x.rows() || y.cols() != 1 {
            return Err(contract("regression targets must be a single column"));
        }
        let xc = tape.constant(x.clone());
        let (mu, var) = self.forward_on_tape(tape, xc);
        let yc = tape.constant(y.clone());
        let diff = tape.sub(yc, mu);
        let sq = tape.square(diff);
        let two_v = tape.scale(var, 2.0);
        let inv = tape.recip(two_v);
        let quad = tape.mul(sq, inv);
        let lv = tape.log(var);
        let lv = tape.add_const(lv, stats::LN_2PI);
        let lv = tape.scale(lv, 0.5);
        let total = tape.add(lv, quad);
        Ok(tape.sum(total))
    }

    /// Batch-summed cross entropy between labels and softmax of the mean
    /// logits; the variance head does not enter this loss.
    pub fn classification_loss(&self, tape: &mut Tape, x: &Tensor, y: &Tensor) -> Result<Var> {
        let classes = match self.task {
            TaskKind::Classification { classes } => classes,
            TaskKind::Regression => {
                return Err(contract("classification loss on a regression member"))
            }
        };
        let labels = crate::deepgp::class_indices(y, classes)?;
        let xc = tape.constant(x.clone());
        let (mu, _) = self.forward_on_tape(tape, xc);
        let lse = tape.logsumexp_rows(mu);
        let pick = tape.pick_per_row(mu, &labels);
        let nll_rows = tape.sub(lse, pick);
        Ok(tape.sum(nll_rows))
    }

    /// Task-appropriate batch-summed training loss.
    pub fn loss(&self, tape: &mut Tape, x: &Tensor, y: &Tensor) -> Result<Var> {
        match self.task {
            TaskKind::Regression => self.regression_loss(tape, x, y),
            TaskKind::Classification { .. } => self.classification_loss(tape, x, y),
        }
    }
}

/// Equal-weight Gaussian mixture moments for one query point:
/// `mu* = mean(mu_j)`, `var* = mean(var_j + mu_j^2) - mu*^2`.
pub fn aggregate_regression(mus: &[f64], vars: &[f64]) -> Result<(f64, f64)> {
    if mus.is_empty() || mus.len() != vars.len() {
        return Err(contract("need matching nonempty member means and variances"));
    }
    let k = mus.len() as f64;
    let mu = mus.iter().sum::<f64>() / k;
    let second = mus.iter().zip(vars).map(|(m, v)| v + m * m).sum::<f64>() / k;
    Ok((mu, (second - mu * mu).max(0.0)))
}

/// K independently initialized members plus the task they share.
#[derive(Debug, Clone)]
pub struct DeepEnsemble {
    pub members: Vec<MlpMember>,
    pub task: TaskKind,
}

impl DeepEnsemble {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        task: TaskKind,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        if k < 2 {
            return Err(contract("ensemble needs at least two members"));
        }
        let members = (0..k)
            .map(|j| {
                MlpMember::new(input_dim, hidden, task, seeding::derive(seed, "ensemble-member", j as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DeepEnsemble { members, task })
    }

    /// Train every member independently (in parallel); member `j` shuffles
    /// with its own derived seed, so results don't depend on scheduling.
    pub fn fit(
        &mut self,
        x: &Tensor,
        y: &Tensor,
        val: Option<(&Tensor, &Tensor)>,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Vec<Vec<EpochRecord>>> {
        self.members
            .par_iter_mut()
            .enumerate()
            .map(|(j, member)| {
                let member_seed = seeding::derive(seed, "ensemble-train", j as u64);
                train::run_adam(
                    member,
                    x,
                    y,
                    val,
                    cfg,
                    member_seed,
                    |m, tape, xb, yb, _| {
                        let l = m.loss(tape, xb, yb)?;
                        Ok(tape.scale(l, 1.0 / xb.rows() as f64))
                    },
                    |m| &mut m.store,
                    |m, xv, yv| {
                        let mut t = Tape::new();
                        let l = m.loss(&mut t, xv, yv)?;
                        Ok(t.value(l).scalar_value() / xv.rows() as f64)
                    },
                )
            })
            .collect()
    }

    /// Moment-matched Gaussian predictive for regression.
    pub fn predict_regression(&self, x: &Tensor) -> Result<Predictive> {
        if self.task != TaskKind::Regression {
            return Err(contract("regression prediction on a classification ensemble"));
        }
        let outputs: Vec<(Tensor, Tensor)> =
            self.members.iter().map(|m| m.forward_plain(x)).collect();
        let n = x.rows();
        let mut means = Vec::with_capacity(n);
        let mut vars = Vec::with_capacity(n);
        for i in 0..n {
            let mus: Vec<f64> = outputs.iter().map(|(m, _)| m.data()[i]).collect();
            let vs: Vec<f64> = outputs.iter().map(|(_, v)| v.data()[i]).collect();
            let (mu, var) = aggregate_regression(&mus, &vs)?;
            means.push(mu);
            vars.push(var.max(VAR_FLOOR));
        }
        Ok(Predictive::Gaussian(GaussianMarginals::new(means, vars)?))
    }

    /// Sampled-softmax class probabilities: logit draws from each member's
    /// Gaussian heads, softmaxed and averaged over members and samples.
    pub fn classify(&self, x: &Tensor, samples_per_member: usize, seed: u64) -> Result<Predictive> {
        let classes = match self.task {
            TaskKind::Classification { classes } => classes,
            TaskKind::Regression => {
                return Err(contract("classification on a regression ensemble"))
            }
        };
        if samples_per_member == 0 {
            return Err(contract("need at least one logit sample per member"));
        }
        let b = x.rows();
        let mut probs = Tensor::zeros(b, classes);
        let norm = (self.members.len() * samples_per_member) as f64;
        for (j, member) in self.members.iter().enumerate() {
            let (mu, var) = member.forward_plain(x);
            let mut rng = seeding::substream(seed, "ensemble-classify", j as u64);
            for _ in 0..samples_per_member {
                for i in 0..b {
                    let logits: Vec<f64> = (0..classes)
                        .map(|c| {
                            let e: f64 = rng.sample(StandardNormal);
                            mu.at(i, c) + e * var.at(i, c).sqrt()
                        })
                        .collect();
                    let p = crate::likelihood::softmax_probs(&logits);
                    for c in 0..classes {
                        probs.data_mut()[i * classes + c] += p[c] / norm;
                    }
                }
            }
        }
        Ok(Predictive::Categorical(probs))
    }
}
