//! Bayesian-optimization hyperparameter tuner: Sobol initialization, an
//! exact-GP surrogate over encoded configurations, and expected-improvement
//! acquisition maximized over Sobol candidate batches.

use crate::error::{contract, CoreError, Result};
use crate::gp::ExactGp;
use crate::seeding;
use crate::sobol::SobolSequence;
use crate::stats;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// One hyperparameter's domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Continuous { lo: f64, hi: f64, log_scale: bool },
    Integer { lo: i64, hi: i64 },
    Categorical { choices: Vec<String> },
}

impl Domain {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            Domain::Continuous { lo, hi, log_scale } => {
                if !(lo < hi) {
                    return Err(contract(format!("{name}: need lo < hi, got [{lo}, {hi}]")));
                }
                if *log_scale && *lo <= 0.0 {
                    return Err(contract(format!("{name}: log scale needs lo > 0, got {lo}")));
                }
            }
            Domain::Integer { lo, hi } => {
                if lo >= hi {
                    return Err(contract(format!("{name}: need lo < hi, got [{lo}, {hi}]")));
                }
            }
            Domain::Categorical { choices } => {
                if choices.is_empty() {
                    return Err(contract(format!("{name}: empty choice set")));
                }
            }
        }
        Ok(())
    }

    /// Map a unit-interval coordinate into the domain. Log-scaled
    /// continuous domains interpolate in log space; integers round;
    /// categoricals stratify uniformly.
    pub fn map_unit(&self, u: f64) -> ConfigValue {
        match self {
            Domain::Continuous { lo, hi, log_scale: false } => {
                ConfigValue::Float(lo + u * (hi - lo))
            }
            Domain::Continuous { lo, hi, log_scale: true } => {
                ConfigValue::Float((lo.ln() + u * (hi.ln() - lo.ln())).exp())
            }
            Domain::Integer { lo, hi } => {
                let v = (*lo as f64 + u * (hi - lo) as f64).round() as i64;
                ConfigValue::Int(v.clamp(*lo, *hi))
            }
            Domain::Categorical { choices } => {
                let k = choices.len();
                let idx = ((u * k as f64) as usize).min(k - 1);
                ConfigValue::Choice(choices[idx].clone())
            }
        }
    }

    /// Width of this domain's surrogate encoding: categoricals expand to
    /// one-hot, everything else is one coordinate.
    fn encoded_width(&self) -> usize {
        match self {
            Domain::Categorical { choices } => choices.len(),
            _ => 1,
        }
    }

    /// Surrogate coordinates for a value: continuous and integer values
    /// normalize to [0, 1] (log domains in log space), categoricals
    /// one-hot encode.
    fn encode(&self, value: &ConfigValue, out: &mut Vec<f64>) -> Result<()> {
        match (self, value) {
            (Domain::Continuous { lo, hi, log_scale: false }, ConfigValue::Float(v)) => {
                out.push((v - lo) / (hi - lo));
            }
            (Domain::Continuous { lo, hi, log_scale: true }, ConfigValue::Float(v)) => {
                out.push((v.ln() - lo.ln()) / (hi.ln() - lo.ln()));
            }
            (Domain::Integer { lo, hi }, ConfigValue::Int(v)) => {
                out.push((v - lo) as f64 / (hi - lo) as f64);
            }
            (Domain::Categorical { choices }, ConfigValue::Choice(c)) => {
                let idx = choices
                    .iter()
                    .position(|x| x == c)
                    .ok_or_else(|| contract(format!("choice {c:?} not in domain")))?;
                for i in 0..choices.len() {
                    out.push(if i == idx { 1.0 } else { 0.0 });
                }
            }
            _ => return Err(contract("config value does not match its domain")),
        }
        Ok(())
    }
}

/// A named hyperparameter value. `Int` precedes `Float` so untagged
/// deserialization keeps integer literals integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Int(i64),
    Float(f64),
    Choice(String),
}

impl ConfigValue {
    pub fn as_f64(&self) -> Result<f64> {
        match self {
            ConfigValue::Float(v) => Ok(*v),
            ConfigValue::Int(v) => Ok(*v as f64),
            ConfigValue::Choice(c) => Err(contract(format!("{c:?} is not numeric"))),
        }
    }

    pub fn as_usize(&self) -> Result<usize> {
        match self {
            ConfigValue::Int(v) if *v >= 0 => Ok(*v as usize),
            other => Err(contract(format!("{other:?} is not a nonnegative integer"))),
        }
    }

    pub fn as_str(&self) -> Result<&str> {
        match self {
            ConfigValue::Choice(c) => Ok(c),
            other => Err(contract(format!("{other:?} is not a categorical choice"))),
        }
    }
}

/// One sampled configuration, keyed by hyperparameter name.
pub type TrialConfig = BTreeMap<String, ConfigValue>;

/// Ordered collection of hyperparameter domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<(String, Domain)>,
}

impl SearchSpace {
    pub fn new(dims: Vec<(String, Domain)>) -> Result<Self> {
        if dims.is_empty() {
            return Err(contract("search space needs at least one dimension"));
        }
        for (name, domain) in &dims {
            if name.is_empty() {
                return Err(contract("hyperparameter names must be nonempty"));
            }
            domain.validate(name)?;
        }
        let mut names: Vec<&str> = dims.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(contract("duplicate hyperparameter name"));
        }
        Ok(SearchSpace { dims })
    }

    fn map_point(&self, u: &[f64]) -> TrialConfig {
        self.dims
            .iter()
            .zip(u)
            .map(|((name, domain), &ui)| (name.clone(), domain.map_unit(ui)))
            .collect()
    }

    fn encode(&self, config: &TrialConfig) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dims.iter().map(|(_, d)| d.encoded_width()).sum());
        for (name, domain) in &self.dims {
            let value = config
                .get(name)
                .ok_or_else(|| contract(format!("config missing {name:?}")))?;
            domain.encode(value, &mut out)?;
        }
        Ok(out)
    }
}

/// Quasi-random configurations: a seeded digitally-shifted Sobol batch
/// mapped through every domain.
pub fn sobol_points(space: &SearchSpace, n: usize, seed: u64) -> Result<Vec<TrialConfig>> {
    if n == 0 {
        return Err(contract("need at least one point"));
    }
    let mut seq = SobolSequence::shifted(space.dims.len(), seed)?;
    Ok((0..n).map(|_| space.map_point(&seq.next_point())).collect())
}

/// Expected improvement for minimization:
/// `EI = (best - mu) Phi(z) + sigma phi(z)` with `z = (best - mu)/sigma`,
/// degenerating to `max(best - mu, 0)` at `sigma = 0`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    assert!(sigma >= 0.0, "EI needs a nonnegative predictive std, got {sigma}");
    if sigma == 0.0 {
        return (best - mu).max(0.0);
    }
    let z = (best - mu) / sigma;
    ((best - mu) * stats::normal_cdf(z) + sigma * stats::normal_pdf(z)).max(0.0)
}

/// Trial completion state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Failed,
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub config: TrialConfig,
    /// Validation objective (lower is better); absent for failed trials.
    pub objective: Option<f64>,
    pub status: TrialStatus,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// Tuner settings; the defaults give 20 trials with 5 Sobol
/// initialization points and 1024 acquisition candidates per iteration.
#[derive(Debug, Clone)]
pub struct TuneOptions {
    pub trials: usize,
    pub init: usize,
    pub candidates: usize,
    pub surrogate_steps: usize,
    pub surrogate_lr: f64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions { trials: 20, init: 5, candidates: 1024, surrogate_steps: 50, surrogate_lr: 0.05 }
    }
}

/// Search result: the best completed trial and the full history.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: TrialRecord,
    pub history: Vec<TrialRecord>,
}

/// Running best objective after each trial (ignoring failed trials);
/// entries before the first success are +inf.
pub fn incumbent_trace(history: &[TrialRecord]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    history
        .iter()
        .map(|t| {
            if let Some(v) = t.objective {
                best = best.min(v);
            }
            best
        })
        .collect()
}

const EI_JITTER: f64 = 0.01;

struct Surrogate {
    sigma_f: f64,
    lengthscale: Vec<f64>,
    noise_var: f64,
}

impl Surrogate {
    fn new(width: usize) -> Self {
        Surrogate { sigma_f: 1.0, lengthscale: vec![0.5; width], noise_var: 0.1 }
    }

    /// Refit on standardized objectives, warm-starting from the previous
    /// hyperparameters; returns per-candidate (mean, std) on the
    /// standardized scale plus the standardized incumbent.
    fn score_candidates(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[f64],
        candidates: &[Vec<f64>],
        steps: usize,
        lr: f64,
    ) -> Result<(Vec<(f64, f64)>, f64)> {
        let n = ys.len();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let sd = {
            let v = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
            if v.sqrt() > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        };
        let z: Vec<f64> = ys.iter().map(|y| (y - mean) / sd).collect();
        let x = Tensor::from_rows(&xs.to_vec());
        let y = Tensor::col(&z);
        let mut gp = ExactGp::new(x, y, self.sigma_f, &self.lengthscale, self.noise_var)?;
        gp.fit(steps, lr)?;
        self.sigma_f = gp.store.value(gp.kernel.sigma_f).scalar_value();
        self.lengthscale = gp.store.value(gp.kernel.lengthscale).data().to_vec();
        self.noise_var = gp.store.value(gp.noise_var).scalar_value();
        let xq = Tensor::from_rows(&candidates.to_vec());
        let post = gp.posterior(&xq, false)?;
        let scored = post
            .means
            .iter()
            .zip(&post.vars)
            .map(|(&m, &v)| (m, v.sqrt()))
            .collect();
        let best_z = z.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        Ok((scored, best_z))
    }
}

/// Minimize a black-box objective over a search space: `init` Sobol
/// trials, then EI-guided trials until the budget is spent. A trial whose
/// objective errors or returns a non-finite value is marked failed and
/// excluded from the surrogate.
pub fn tune<F>(
    mut objective: F,
    space: &SearchSpace,
    opts: &TuneOptions,
    seed: u64,
) -> Result<TuneOutcome>
where
    F: FnMut(&TrialConfig, u64) -> Result<f64>,
{
    if opts.init == 0 || opts.trials < opts.init {
        return Err(contract(format!(
            "need trials >= init >= 1, got trials {} init {}",
            opts.trials, opts.init
        )));
    }
    if opts.candidates == 0 {
        return Err(contract("need at least one acquisition candidate"));
    }
    let init_configs = sobol_points(space, opts.init, seeding::derive(seed, "hpo-init", 0))?;
    let mut history: Vec<TrialRecord> = Vec::with_capacity(opts.trials);
    let mut surrogate = Surrogate::new(space.dims.iter().map(|(_, d)| d.encoded_width()).sum());

    for t in 0..opts.trials {
        let config = if t < opts.init {
            init_configs[t].clone()
        } else {
            let candidates = sobol_points(
                space,
                opts.candidates,
                seeding::derive(seed, "hpo-candidates", t as u64),
            )?;
            let completed: Vec<&TrialRecord> = history
                .iter()
                .filter(|r| r.status == TrialStatus::Completed)
                .collect();
            if completed.is_empty() {
                candidates[0].clone()
            } else {
                let xs: Vec<Vec<f64>> = completed
                    .iter()
                    .map(|r| space.encode(&r.config))
                    .collect::<Result<_>>()?;
                let ys: Vec<f64> = completed.iter().map(|r| r.objective.unwrap()).collect();
                let enc: Vec<Vec<f64>> = candidates
                    .iter()
                    .map(|c| space.encode(c))
                    .collect::<Result<_>>()?;
                let (scored, best_z) = surrogate.score_candidates(
                    &xs,
                    &ys,
                    &enc,
                    opts.surrogate_steps,
                    opts.surrogate_lr,
                )?;
                let target = best_z - EI_JITTER;
                let mut best_idx = 0;
                let mut best_ei = f64::NEG_INFINITY;
                for (i, &(m, s)) in scored.iter().enumerate() {
                    let ei = expected_improvement(m, s, target);
                    if ei > best_ei {
                        best_ei = ei;
                        best_idx = i;
                    }
                }
                candidates[best_idx].clone()
            }
        };
        let trial_seed = seeding::derive(seed, "hpo-trial", t as u64);
        let start = Instant::now();
        let outcome = objective(&config, trial_seed);
        let wall = start.elapsed().as_secs_f64();
        let (objective_value, status) = match outcome {
            Ok(v) if v.is_finite() => (Some(v), TrialStatus::Completed),
            _ => (None, TrialStatus::Failed),
        };
        history.push(TrialRecord {
            trial: t,
            config,
            objective: objective_value,
            status,
            seed: trial_seed,
            wall_time_s: wall,
        });
    }

    let best = history
        .iter()
        .filter(|r| r.status == TrialStatus::Completed)
        .min_by(|a, b| a.objective.unwrap().total_cmp(&b.objective.unwrap()))
        .cloned()
        .ok_or(CoreError::NoSuccessfulTrials)?;
    Ok(TuneOutcome { best, history })
}
