//! Deep GP composition trained with doubly stochastic variational
//! inference: hidden layers are sampled via the reparameterization
//! `h = mu + eps * sigma`, the ELBO averages S sampled paths, and the
//! final layer keeps its analytic marginals per path.

use crate::error::{contract, Result};
use crate::gp::GaussianMarginals;
use crate::likelihood::TaskKind;
use crate::param::{ParamId, ParamStore, Transform};
use crate::predictive::Predictive;
use crate::seeding;
use crate::svgp::{identity_projection, svgp_elbo_gaussian, SvgpLayer};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

/// Default number of Monte Carlo paths.
pub const DEFAULT_SAMPLES: usize = 10;

/// Multi-layer sparse variational GP with reparameterized hidden layers.
#[derive(Debug, Clone)]
pub struct DeepGp {
    pub store: ParamStore,
    pub layers: Vec<SvgpLayer>,
    pub task: TaskKind,
    /// Monte Carlo paths per objective evaluation.
    pub num_samples: usize,
    /// KL scale in the objective.
    pub beta: f64,
    /// Observation noise variance (regression only).
    pub noise_var: Option<ParamId>,
    /// Constant output mean (regression only).
    pub mean_c: Option<ParamId>,
}

/// Seeded subsample of training rows used to place inducing points;
/// draws with replacement only when more inducing points than rows.
pub(crate) fn inducing_subsample(x: &Tensor, m: usize, seed: u64) -> Tensor {
    let n = x.rows();
    let mut rng = seeding::substream(seed, "dgp-inducing", 0);
    let picks: Vec<usize> = if m <= n {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(m);
        idx
    } else {
        (0..m).map(|_| rng.random_range(0..n)).collect()
    };
    let mut z = Tensor::zeros(m, x.cols());
    for (r, &i) in picks.iter().enumerate() {
        z.data_mut()[r * x.cols()..(r + 1) * x.cols()].copy_from_slice(x.row_slice(i));
    }
    z
}

pub(crate) fn build_layers(
    store: &mut ParamStore,
    x_train: &Tensor,
    dims: &[usize],
    num_inducing: usize,
    seed: u64,
) -> Result<Vec<SvgpLayer>> {
    let mut layers = Vec::with_capacity(dims.len() - 1);
    let mut z = inducing_subsample(x_train, num_inducing, seed);
    for l in 0..dims.len() - 1 {
        let (d_in, width) = (dims[l], dims[l + 1]);
        let hidden = l + 1 < dims.len() - 1;
        let skip = if hidden { Some(identity_projection(d_in, width)) } else { None };
        let layer = SvgpLayer::new(
            store,
            &format!("layer{l}"),
            d_in,
            width,
            &z,
            1.0,
            &[1.0],
            skip,
        )?;
        z = z.matmul(&identity_projection(d_in, width));
        layers.push(layer);
    }
    Ok(layers)
}

impl DeepGp {
    /// Regression model: hidden widths from `hidden`, output width 1,
    /// constant output mean started at the target average.
    pub fn new_regression(
        x_train: &Tensor,
        y_train: &Tensor,
        hidden: &[usize],
        num_inducing: usize,
        seed: u64,
    ) -> Result<Self> {
        if x_train.rows() == 0 {
            return Err(contract("deep GP needs at least one training point"));
        }
        if y_train.rows() != x_train.rows() || y_train.cols() != 1 {
            return Err(contract("regression targets must be a single column"));
        }
        let mut dims = vec![x_train.cols()];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut store = ParamStore::new();
        let layers = build_layers(&mut store, x_train, &dims, num_inducing, seed)?;
        let y_bar = y_train.sum() / y_train.rows() as f64;
        let mean_c = store.add("mean_c", Tensor::scalar(y_bar), Transform::Identity, true);
        let noise_var = store.add("noise_var", Tensor::scalar(0.1), Transform::Exp, true);
        Ok(DeepGp {
            store,
            layers,
            task: TaskKind::Regression,
            num_samples: DEFAULT_SAMPLES,
            beta: 1.0,
            noise_var: Some(noise_var),
            mean_c: Some(mean_c),
        })
    }

    /// Classification model: output width equals the class count, softmax
    /// likelihood over final-layer values.
    pub fn new_classification(
        x_train: &Tensor,
        classes: usize,
        hidden: &[usize],
        num_inducing: usize,
        seed: u64,
    ) -> Result<Self> {
        if x_train.rows() == 0 {
            return Err(contract("deep GP needs at least one training point"));
        }
        if classes < 2 {
            return Err(contract("classification needs at least two classes"));
        }
        let mut dims = vec![x_train.cols()];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let mut store = ParamStore::new();
        let layers = build_layers(&mut store, x_train, &dims, num_inducing, seed)?;
        Ok(DeepGp {
            store,
            layers,
            task: TaskKind::Classification { classes },
            num_samples: DEFAULT_SAMPLES,
            beta: 1.0,
            noise_var: None,
            mean_c: None,
        })
    }

    fn eps(&self, rows: usize, cols: usize, seed: u64, path: usize, layer: usize) -> Tensor {
        let stream = (path * self.layers.len() + layer) as u64;
        let mut rng = seeding::substream(seed, "dgp-eps", stream);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::new(vec![rows, cols], data)
    }

    /// One sampled path without a tape: sampled hidden activations plus
    /// the final layer's analytic marginals conditioned on them.
    fn propagate_plain(
        &self,
        x: &Tensor,
        path: usize,
        seed: u64,
    ) -> Result<(Vec<Tensor>, (Tensor, Tensor))> {
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let (mean, var) = layer.marginals_plain(&self.store, &h)?;
            if l + 1 == self.layers.len() {
                return Ok((hidden, (mean, var)));
            }
            let e = self.eps(mean.rows(), mean.cols(), seed, path, l);
            h = mean.add(&e.mul_elem(&var.map(f64::sqrt)));
            hidden.push(h.clone());
        }
        unreachable!("model has at least one layer");
    }

    /// Sampled hidden activations per path, for diagnostics and tests;
    /// excludes the final layer.
    pub fn hidden_paths(&self, x: &Tensor, s: usize, seed: u64) -> Result<Vec<Vec<Tensor>>> {
        (0..s).map(|p| Ok(self.propagate_plain(x, p, seed)?.0)).collect()
    }

    /// Final-layer marginals for each of `s` sampled paths, `(mean, var)`
    /// both `[B, W]`, in latent space (no observation noise, no constant
    /// mean).
    pub fn forward_samples(
        &self,
        x: &Tensor,
        s: usize,
        seed: u64,
    ) -> Result<Vec<(Tensor, Tensor)>> {
        if s < 1 {
            return Err(contract("need at least one sampled path"));
        }
        (0..s).map(|p| Ok(self.propagate_plain(x, p, seed)?.1)).collect()
    }

    /// One sampled path on the tape, returning final-layer marginal nodes.
    fn propagate_on_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        path: usize,
        seed: u64,
    ) -> Result<(Var, Var)> {
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let (mean, var) = layer.marginals_on_tape(tape, &self.store, h)?;
            if l + 1 == self.layers.len() {
                return Ok((mean, var));
            }
            let (b, w) = tape.shape(mean);
            let e = tape.constant(self.eps(b, w, seed, path, l));
            let sd = tape.sqrt(var);
            let noise = tape.mul(e, sd);
            h = tape.add(mean, noise);
        }
        unreachable!("model has at least one layer");
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

    /// Doubly stochastic ELBO on a mini-batch: S-path Monte Carlo estimate
    /// of the expected log-likelihood, scaled by `n_total / batch`, minus
    /// `beta` times the total KL. For regression targets `y` is `[B, 1]`;
    /// for classification it holds class indices.
    pub fn elbo(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        y: &Tensor,
        n_total: usize,
        seed: u64,
    ) -> Result<Var> {
        let b = x.rows();
        if b == 0 {
            return Err(contract("ELBO batch must be nonempty"));
        }
        if y.rows() != b || y.cols() != 1 {
            return Err(contract(format!("targets must be [{b}, 1], got {:?}", y.shape())));
        }
        match self.task {
            TaskKind::Regression => {
                let noise_var = self.noise_var.expect("regression model has a noise parameter");
                if self.layers.len() == 1 {
                    return svgp_elbo_gaussian(
                        tape,
                        &self.store,
                        &self.layers[0],
                        x,
                        y,
                        noise_var,
                        self.mean_c,
                        n_total,
                        self.beta,
                    );
                }
                let xc = tape.constant(x.clone());
                let mut acc: Option<Var> = None;
                for p in 0..self.num_samples {
                    let (mean, var) = self.propagate_on_tape(tape, xc, p, seed)?;
                    let ell = crate::svgp::gaussian_expected_loglik(
                        tape,
                        &self.store,
                        mean,
                        var,
                        y,
                        noise_var,
                        self.mean_c,
                        b,
                    );
                    acc = Some(match acc {
                        Some(a) => tape.add(a, ell),
                        None => ell,
                    });
                }
                let avg = tape.scale(acc.unwrap(), 1.0 / self.num_samples as f64);
                let scaled = tape.scale(avg, n_total as f64 / b as f64);
                let kl = self.kl_on_tape(tape);
                let kl_scaled = tape.scale(kl, self.beta);
                Ok(tape.sub(scaled, kl_scaled))
            }
            TaskKind::Classification { classes } => {
                let labels = class_indices(y, classes)?;
                let xc = tape.constant(x.clone());
                let mut acc: Option<Var> = None;
                for p in 0..self.num_samples {
                    let (mean, var) = self.propagate_on_tape(tape, xc, p, seed)?;
                    let f = self.sample_final(tape, mean, var, seed, p);
                    let lse = tape.logsumexp_rows(f);
                    let pick = tape.pick_per_row(f, &labels);
                    let ll_rows = tape.sub(pick, lse);
                    let ll = tape.sum(ll_rows);
                    acc = Some(match acc {
                        Some(a) => tape.add(a, ll),
                        None => ll,
                    });
                }
                let avg = tape.scale(acc.unwrap(), 1.0 / self.num_samples as f64);
                let scaled = tape.scale(avg, n_total as f64 / b as f64);
                let kl = self.kl_on_tape(tape);
                let kl_scaled = tape.scale(kl, self.beta);
                Ok(tape.sub(scaled, kl_scaled))
            }
        }
    }

    /// Reparameterized draw of final-layer values; stream index one past
    /// the hidden layers so it never collides with their draws.
    fn sample_final(&self, tape: &mut Tape, mean: Var, var: Var, seed: u64, path: usize) -> Var {
        let (b, w) = tape.shape(mean);
        let e = tape.constant(self.eps(b, w, seed, path, self.layers.len() - 1));
        let sd = tape.sqrt(var);
        let noise = tape.mul(e, sd);
        tape.add(mean, noise)
    }

    /// Sampled predictive distribution. Regression: S-component
    /// uniform-weight Gaussian mixture in observation space (constant mean
    /// and noise variance included). Classification: softmax probabilities
    /// averaged over S sampled final-layer draws.
    pub fn predict(&self, x: &Tensor, s: usize, seed: u64) -> Result<Predictive> {
        let samples = self.forward_samples(x, s, seed)?;
        match self.task {
            TaskKind::Regression => {
                let c = self.mean_c.map_or(0.0, |id| self.store.value(id).scalar_value());
                let s2 = self
                    .noise_var
                    .map_or(0.0, |id| self.store.value(id).scalar_value());
                let comps: Result<Vec<GaussianMarginals>> = samples
                    .iter()
                    .map(|(mean, var)| {
                        GaussianMarginals::new(
                            mean.data().iter().map(|&m| m + c).collect(),
                            var.data().iter().map(|&v| v + s2).collect(),
                        )
                    })
                    .collect();
                Predictive::mixture(vec![1.0 / s as f64; s], comps?)
            }
            TaskKind::Classification { classes } => {
                let b = x.rows();
                let mut probs = Tensor::zeros(b, classes);
                for (p, (mean, var)) in samples.iter().enumerate() {
                    let e = self.eps(b, classes, seed, p, self.layers.len() - 1);
                    for i in 0..b {
                        let logits: Vec<f64> = (0..classes)
                            .map(|j| mean.at(i, j) + e.at(i, j) * var.at(i, j).sqrt())
                            .collect();
                        let pr = crate::likelihood::softmax_probs(&logits);
                        for j in 0..classes {
                            probs.data_mut()[i * classes + j] += pr[j] / s as f64;
                        }
                    }
                }
                Ok(Predictive::Categorical(probs))
            }
        }
    }
}

/// Decode a `[B, 1]` tensor of class indices, validating range.
pub fn class_indices(y: &Tensor, classes: usize) -> Result<Vec<usize>> {
    y.data()
        .iter()
        .map(|&v| {
            let k = v as usize;
            if v < 0.0 || v.fract() != 0.0 || k >= classes {
                return Err(contract(format!("class label {v} outside 0..{classes}")));
            }
            Ok(k)
        })
        .collect()
}
