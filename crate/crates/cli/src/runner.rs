//! Experiment orchestration: build models from configs, train them with
//! seeds derived from the run's master seed, score calibration on held-out
//! rows, and persist stamped artifacts under the output directory.

use crate::config::{apply_trial, search_space, ExperimentConfig, ModelKind, VERSION};
use crate::data::{self, Dataset, DatasetName};
use crate::error::{config_err, CliError, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use uqbench_core::deepgp::{class_indices, DeepGp};
use uqbench_core::dspp::Dspp;
use uqbench_core::ensemble::{DeepEnsemble, DEFAULT_CLASSIFY_SAMPLES};
use uqbench_core::hpo::{self, TrialConfig, TrialRecord, TuneOptions};
use uqbench_core::likelihood::TaskKind;
use uqbench_core::metrics::{self, CurveTruth, MetricReport, DEFAULT_BINS};
use uqbench_core::predictive::Predictive;
use uqbench_core::seeding;
use uqbench_core::shift::{perturb, severity_schedule, PerturbationKind, PerturbationSpec};
use uqbench_core::tape::Tape;
use uqbench_core::train::{run_adam, EpochRecord, TrainConfig};
use uqbench_core::{CoreError, Tensor};

/// Independent training runs in the perturbation protocol.
pub const SHIFT_RUNS: usize = 5;

/// Inducing-point counts swept by the inducing ablation.
pub const INDUCING_GRID: [usize; 5] = [32, 64, 128, 256, 512];

/// Layer counts swept by the depth ablation; hidden layers have width 1.
pub const DEPTH_GRID: [usize; 4] = [1, 2, 4, 8];

/// A trained model of any family, ready for prediction.
pub enum TrainedModel {
    Dgp(DeepGp),
    Dspp(Dspp),
    Ensemble(DeepEnsemble),
}

/// Load or generate the dataset a config points at, split with the
/// config's master seed.
pub fn load_from_spec(config: &ExperimentConfig) -> Result<Dataset> {
    let name = config.dataset.parsed_name()?;
    if name.is_synthetic() {
        let n = config.dataset.size.unwrap_or(data::SYNTHETIC_ROWS);
        return data::synthetic_dataset(name, n, config.seed);
    }
    let path = config.dataset.resolved_path()?;
    match name {
        DatasetName::Casp => data::load_casp(&path, config.seed, config.dataset.target_column),
        DatasetName::Esr => data::load_esr(&path, config.seed, config.dataset.target_column),
        _ => unreachable!("synthetic names handled above"),
    }
}

/// Mean train/val curve across ensemble members, epoch by epoch.
fn average_curves(curves: &[Vec<EpochRecord>]) -> Vec<EpochRecord> {
    let epochs = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    let k = curves.len() as f64;
    (0..epochs)
        .map(|e| {
            let train_loss = curves.iter().map(|c| c[e].train_loss).sum::<f64>() / k;
            let vals: Vec<f64> = curves.iter().filter_map(|c| c[e].val_loss).collect();
            let val_loss = if vals.len() == curves.len() {
                Some(vals.iter().sum::<f64>() / k)
            } else {
                None
            };
            EpochRecord { epoch: e, train_loss, val_loss }
        })
        .collect()
}

/// Train the configured model on the dataset's training rows, recording
/// the per-epoch train/validation loss (negative objective per datapoint
/// for the GP models, task loss for the ensemble). Initialization,
/// shuffling, Monte Carlo draws, and validation draws each use their own
/// substream derived from the config seed.
pub fn train_model(
    config: &ExperimentConfig,
    data: &Dataset,
) -> Result<(TrainedModel, Vec<EpochRecord>)> {
    data.verify_no_leakage()?;
    let (x_train, y_train) = data.train_xy();
    let (x_val, y_val) = data.val_xy();
    let init_seed = seeding::derive(config.seed, "model-init", 0);
    let train_seed = seeding::derive(config.seed, "train", 0);
    let cfg = TrainConfig {
        epochs: config.epochs_or_default()?,
        batch_size: config.batch_size,
        lr: config.lr,
    };
    let n_total = x_train.rows();
    match config.model {
        ModelKind::Dgp => {
            let mut model = match data.task {
                TaskKind::Regression => DeepGp::new_regression(
                    &x_train,
                    &y_train,
                    &config.architecture,
                    config.num_inducing,
                    init_seed,
                )?,
                TaskKind::Classification { classes } => DeepGp::new_classification(
                    &x_train,
                    classes,
                    &config.architecture,
                    config.num_inducing,
                    init_seed,
                )?,
            };
            model.num_samples = config.num_samples;
            let val_seed = seeding::derive(config.seed, "val-mc", 0);
            let records = run_adam(
                &mut model,
                &x_train,
                &y_train,
                Some((&x_val, &y_val)),
                &cfg,
                train_seed,
                |m, tape, xb, yb, step| {
                    let mc_seed = seeding::derive(train_seed, "elbo-mc", step);
                    let elbo = m.elbo(tape, xb, yb, n_total, mc_seed)?;
                    Ok(tape.scale(elbo, -1.0 / n_total as f64))
                },
                |m| &mut m.store,
                |m, xv, yv| {
                    let mut tape = Tape::new();
                    let elbo = m.elbo(&mut tape, xv, yv, xv.rows(), val_seed)?;
                    Ok(-tape.value(elbo).scalar_value() / xv.rows() as f64)
                },
            )?;
            Ok((TrainedModel::Dgp(model), records))
        }
        ModelKind::Dspp => {
            let mut model = match data.task {
                TaskKind::Regression => Dspp::new_regression(
                    &x_train,
                    &y_train,
                    &config.architecture,
                    config.num_inducing,
                    config.num_sites,
                    init_seed,
                )?,
                TaskKind::Classification { classes } => Dspp::new_classification(
                    &x_train,
                    classes,
                    &config.architecture,
                    config.num_inducing,
                    config.num_sites,
                    init_seed,
                )?,
            };
            let records = run_adam(
                &mut model,
                &x_train,
                &y_train,
                Some((&x_val, &y_val)),
                &cfg,
                train_seed,
                |m, tape, xb, yb, _| {
                    let obj = m.objective(tape, xb, yb, n_total)?;
                    Ok(tape.scale(obj, -1.0 / n_total as f64))
                },
                |m| &mut m.store,
                |m, xv, yv| {
                    let mut tape = Tape::new();
                    let obj = m.objective(&mut tape, xv, yv, xv.rows())?;
                    Ok(-tape.value(obj).scalar_value() / xv.rows() as f64)
                },
            )?;
            Ok((TrainedModel::Dspp(model), records))
        }
        ModelKind::Ensemble => {
            let mut model = DeepEnsemble::new(
                data.num_features(),
                &config.architecture,
                data.task,
                config.num_members,
                init_seed,
            )?;
            let curves = model.fit(&x_train, &y_train, Some((&x_val, &y_val)), &cfg, train_seed)?;
            Ok((TrainedModel::Ensemble(model), average_curves(&curves)))
        }
    }
}

/// Predictive distribution on a feature matrix; `eval_seed` drives any
/// Monte Carlo inside prediction (deep GP paths, ensemble logit draws).
pub fn predict(
    model: &TrainedModel,
    x: &Tensor,
    config: &ExperimentConfig,
    eval_seed: u64,
) -> Result<Predictive> {
    match model {
        TrainedModel::Dgp(m) => Ok(m.predict(x, config.num_samples, eval_seed)?),
        TrainedModel::Dspp(m) => Ok(m.predict(x)?),
        TrainedModel::Ensemble(m) => match m.task {
            TaskKind::Regression => Ok(m.predict_regression(x)?),
            TaskKind::Classification { .. } => {
                Ok(m.classify(x, DEFAULT_CLASSIFY_SAMPLES, eval_seed)?)
            }
        },
    }
}

/// Score a trained model on one split: NLL plus the task's calibration
/// and accuracy metrics, with the reliability curve attached.
/// Classification reports ECE and ACC; regression reports interval
/// calibration and MAE; each leaves the other task's fields unset.
pub fn evaluate_split(
    model: &TrainedModel,
    config: &ExperimentConfig,
    data: &Dataset,
    x: &Tensor,
    y: &Tensor,
    eval_seed: u64,
    severity: Option<f64>,
) -> Result<MetricReport> {
    let pred = predict(model, x, config, eval_seed)?;
    let (nll, ece, ce_reg, mae, accuracy, reliability) = match data.task {
        TaskKind::Regression => {
            let targets = y.data();
            let nll = metrics::nll_regression(&pred, targets)?;
            let (means, vars) = pred.mean_var()?;
            let stds: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();
            let (ce, curve) = metrics::regression_calibration(&means, &stds, targets, DEFAULT_BINS)?;
            let mae = metrics::mae(&means, targets)?;
            (nll, None, Some(ce), Some(mae), None, curve)
        }
        TaskKind::Classification { classes } => {
            let labels = class_indices(y, classes)?;
            let probs = pred.class_probs()?;
            let nll = metrics::nll_classification(probs, &labels)?;
            let (ece, _) = metrics::ece_classification(probs, &labels, DEFAULT_BINS)?;
            let acc = metrics::accuracy(probs, &labels)?;
            let curve = metrics::reliability_curve(&pred, &CurveTruth::Labels(&labels), DEFAULT_BINS)?;
            (nll, Some(ece), None, None, Some(acc), curve)
        }
    };
    Ok(MetricReport {
        model: config.model.as_str().to_string(),
        dataset: data.name.as_str().to_string(),
        seed: config.seed,
        severity,
        nll,
        ece,
        ce_reg,
        mae,
        accuracy,
        reliability,
    })
}

/// Everything a single training run produces.
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub report: MetricReport,
    pub curve: Vec<EpochRecord>,
}

fn execute(config: &ExperimentConfig) -> Result<(Dataset, TrainedModel, Vec<EpochRecord>, MetricReport)> {
    config.validate()?;
    let dataset = load_from_spec(config)?;
    let (model, curve) = train_model(config, &dataset)?;
    let (x_test, y_test) = dataset.test_xy();
    let eval_seed = seeding::derive(config.seed, "eval", 0);
    let report = evaluate_split(&model, config, &dataset, &x_test, &y_test, eval_seed, None)?;
    Ok((dataset, model, curve, report))
}

/// Train, evaluate on the test split, and persist `metrics.json`,
/// `loss_curve.csv`, and `reliability.csv` under
/// `<out_dir>/<model>-<dataset>-seed<seed>/`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let (dataset, _, curve, report) = execute(config)?;
    let out_dir = run_dir(config, dataset.name, None)?;
    let hash = config.config_hash()?;
    write_file(&out_dir.join("metrics.json"), &metrics_json(&hash, &report)?)?;
    write_file(&out_dir.join("loss_curve.csv"), &loss_curve_csv(&hash, &curve))?;
    let mut reliability = stamp(&hash);
    reliability.push_str(&metrics::reliability_csv(&report.reliability));
    write_file(&out_dir.join("reliability.csv"), &reliability)?;
    Ok(RunArtifacts { out_dir, report, curve })
}

/// Train from scratch and persist test metrics only (models are rebuilt
/// rather than serialized, so evaluation always trains first).
pub fn run_evaluation(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let (dataset, _, curve, report) = execute(config)?;
    let out_dir = run_dir(config, dataset.name, None)?;
    let hash = config.config_hash()?;
    write_file(&out_dir.join("metrics.json"), &metrics_json(&hash, &report)?)?;
    Ok(RunArtifacts { out_dir, report, curve })
}

/// One long-format result row of the perturbation protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    pub model: String,
    pub seed: u64,
    pub kind: String,
    pub severity: f64,
    pub metric: String,
    pub value: f64,
}

/// Collected shift results; failed runs keep their seed and diagnostic so
/// partial tables stay honest.
#[derive(Debug, Clone, Default)]
pub struct ShiftResultTable {
    pub rows: Vec<ShiftRow>,
    pub failures: Vec<(u64, String)>,
}

impl ShiftResultTable {
    /// Long-format CSV `model,seed,kind,severity,metric,value`, stamped
    /// with provenance, failed runs recorded as trailing comments.
    pub fn to_csv(&self, hash: &str) -> String {
        let mut out = stamp(hash);
        out.push_str("model,seed,kind,severity,metric,value\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.model, r.seed, r.kind, r.severity, r.metric, r.value
            ));
        }
        for (seed, msg) in &self.failures {
            out.push_str(&format!("# failed_run seed={seed}: {msg}\n"));
        }
        out
    }
}

fn metric_values(report: &MetricReport) -> Vec<(&'static str, f64)> {
    let mut vals = vec![("nll", report.nll)];
    if let Some(v) = report.ece {
        vals.push(("ece", v));
    }
    if let Some(v) = report.ce_reg {
        vals.push(("ce_reg", v));
    }
    if let Some(v) = report.mae {
        vals.push(("mae", v));
    }
    if let Some(v) = report.accuracy {
        vals.push(("acc", v));
    }
    vals
}

/// The perturbation protocol: train 5 independent runs (fresh derived
/// seed each, same data split), then evaluate every run on the test
/// split perturbed by all five kinds across the severity grid (severity
/// 0 only when the config's shift flag is off). A run that fails to
/// train or evaluate is recorded and skipped; the partial table is still
/// persisted as `shift_results.csv`.
pub fn run_shift_experiment(config: &ExperimentConfig) -> Result<(ShiftResultTable, PathBuf)> {
    config.validate()?;
    let dataset = load_from_spec(config)?;
    let severities: Vec<f64> =
        if config.shift { severity_schedule().to_vec() } else { vec![0.0] };
    let (x_test, y_test) = dataset.test_xy();
    let stds = dataset.train_feature_stds();
    let perturb_seed = seeding::derive(config.seed, "shift-perturb", 0);
    let mut table = ShiftResultTable::default();
    for run in 0..SHIFT_RUNS {
        let run_seed = seeding::derive(config.seed, "shift-run", run as u64);
        let mut run_config = config.clone();
        run_config.seed = run_seed;
        let model = match train_model(&run_config, &dataset) {
            Ok((model, _)) => model,
            Err(e) => {
                table.failures.push((run_seed, e.to_string()));
                continue;
            }
        };
        let eval_seed = seeding::derive(run_seed, "shift-eval", 0);
        'kinds: for kind in PerturbationKind::ALL {
            for &severity in &severities {
                let spec = PerturbationSpec::new(kind, severity, perturb_seed, stds.clone())?;
                let xp = perturb(&x_test, &spec)?;
                let report = match evaluate_split(
                    &model,
                    &run_config,
                    &dataset,
                    &xp,
                    &y_test,
                    eval_seed,
                    Some(severity),
                ) {
                    Ok(r) => r,
                    Err(e) => {
                        table
                            .failures
                            .push((run_seed, format!("{} severity {severity}: {e}", kind.name())));
                        break 'kinds;
                    }
                };
                for (metric, value) in metric_values(&report) {
                    table.rows.push(ShiftRow {
                        model: config.model.as_str().to_string(),
                        seed: run_seed,
                        kind: kind.name().to_string(),
                        severity,
                        metric: metric.to_string(),
                        value,
                    });
                }
            }
        }
    }
    let out_dir = run_dir(config, dataset.name, Some("shift"))?;
    write_file(&out_dir.join("shift_results.csv"), &table.to_csv(&config.config_hash()?))?;
    Ok((table, out_dir))
}

/// Which hyperparameter the ablation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    Inducing,
    Depth,
}

impl AblationKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "inducing" => Ok(AblationKind::Inducing),
            "depth" => Ok(AblationKind::Depth),
            other => {
                Err(config_err(format!("unknown sweep {other:?}; expected inducing or depth")))
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationKind::Inducing => "inducing",
            AblationKind::Depth => "depth",
        }
    }

    pub fn grid(&self) -> &'static [usize] {
        match self {
            AblationKind::Inducing => &INDUCING_GRID,
            AblationKind::Depth => &DEPTH_GRID,
        }
    }
}

/// Sweep inducing counts (no hidden layers) or stack depth (width-1
/// hidden layers, 128 inducing points) for a GP model, reporting test
/// NLL per grid point. The protocol fixes lr 0.01 and 20 epochs; an
/// explicit epochs setting in the config overrides the latter for smoke
/// runs. Emits `ablation_<kind>.csv` with rows `value,nll`.
pub fn run_ablation(
    kind: AblationKind,
    config: &ExperimentConfig,
) -> Result<(Vec<(usize, f64)>, PathBuf)> {
    config.validate()?;
    if !config.model.is_gp() {
        return Err(config_err(format!(
            "ablation sweeps apply to GP models, got {}",
            config.model
        )));
    }
    let dataset = load_from_spec(config)?;
    let (x_test, y_test) = dataset.test_xy();
    let mut rows = Vec::with_capacity(kind.grid().len());
    for (i, &value) in kind.grid().iter().enumerate() {
        let mut point = config.clone();
        point.lr = 0.01;
        point.epochs = Some(config.epochs.unwrap_or(20));
        point.seed = seeding::derive(config.seed, "ablation", i as u64);
        match kind {
            AblationKind::Inducing => {
                point.architecture = Vec::new();
                point.num_inducing = value;
            }
            AblationKind::Depth => {
                point.architecture = vec![1; value - 1];
                point.num_inducing = 128;
            }
        }
        let (model, _) = train_model(&point, &dataset)?;
        let eval_seed = seeding::derive(point.seed, "eval", 0);
        let report =
            evaluate_split(&model, &point, &dataset, &x_test, &y_test, eval_seed, None)?;
        rows.push((value, report.nll));
    }
    let out_dir = run_dir(config, dataset.name, Some("ablation"))?;
    let mut csv = stamp(&config.config_hash()?);
    csv.push_str("value,nll\n");
    for (value, nll) in &rows {
        csv.push_str(&format!("{value},{nll}\n"));
    }
    write_file(&out_dir.join(format!("ablation_{}.csv", kind.as_str())), &csv)?;
    Ok((rows, out_dir))
}

fn to_core(e: CliError) -> CoreError {
    match e {
        CliError::Numeric(msg) => CoreError::NumericFailure(msg),
        other => CoreError::ContractViolation(other.to_string()),
    }
}

/// Tuning results: the winning config with the original master seed
/// restored, plus the full trial history.
pub struct TuningArtifacts {
    pub best_config: ExperimentConfig,
    pub best: TrialRecord,
    pub history: Vec<TrialRecord>,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct ProvenanceLine<'a> {
    config_hash: &'a str,
    version: &'a str,
}

#[derive(Serialize)]
struct BestConfigDocument<'a> {
    config_hash: &'a str,
    version: &'a str,
    objective: Option<f64>,
    config: &'a ExperimentConfig,
}

/// Search the model's hyperparameter space, scoring each candidate by
/// validation NLL after a full training run with the trial's own seed
/// (the test split is never touched). Persists `trials.jsonl` (first
/// line provenance, then one record per trial) and `best_config.json`.
pub fn run_tuning(
    config: &ExperimentConfig,
    opts: &TuneOptions,
) -> Result<TuningArtifacts> {
    config.validate()?;
    let dataset = load_from_spec(config)?;
    let space = search_space(config.model, dataset.name)?;
    let (x_val, y_val) = dataset.val_xy();
    let objective = |trial: &TrialConfig, trial_seed: u64| -> uqbench_core::Result<f64> {
        let mut candidate = apply_trial(config, trial).map_err(to_core)?;
        candidate.seed = trial_seed;
        let (model, _) = train_model(&candidate, &dataset).map_err(to_core)?;
        let eval_seed = seeding::derive(trial_seed, "tune-val", 0);
        let report =
            evaluate_split(&model, &candidate, &dataset, &x_val, &y_val, eval_seed, None)
                .map_err(to_core)?;
        Ok(report.nll)
    };
    let outcome = hpo::tune(objective, &space, opts, config.seed)?;
    let mut best_config = apply_trial(config, &outcome.best.config)?;
    best_config.seed = config.seed;
    let out_dir = run_dir(config, dataset.name, Some("tune"))?;
    let hash = config.config_hash()?;
    let mut jsonl = to_json_line(&ProvenanceLine { config_hash: &hash, version: VERSION })?;
    for record in &outcome.history {
        jsonl.push_str(&to_json_line(record)?);
    }
    write_file(&out_dir.join("trials.jsonl"), &jsonl)?;
    let best_doc = BestConfigDocument {
        config_hash: &hash,
        version: VERSION,
        objective: outcome.best.objective,
        config: &best_config,
    };
    let mut best_json =
        serde_json::to_string_pretty(&best_doc).map_err(|e| config_err(e.to_string()))?;
    best_json.push('\n');
    write_file(&out_dir.join("best_config.json"), &best_json)?;
    Ok(TuningArtifacts { best_config, best: outcome.best, history: outcome.history, out_dir })
}

/// Collect every `<run>/metrics.json` one level below `dir`, sorted by
/// run directory name.
pub fn summarize_directory(dir: &Path) -> Result<Vec<(PathBuf, serde_json::Value)>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))?;
    let mut run_dirs: Vec<PathBuf> =
        entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    run_dirs.sort();
    let mut out = Vec::new();
    for run in run_dirs {
        let path = run.join("metrics.json");
        if !path.is_file() {
            continue;
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        out.push((run, value));
    }
    Ok(out)
}

fn stamp(hash: &str) -> String {
    format!("# config={hash} version={VERSION}\n")
}

fn run_dir(
    config: &ExperimentConfig,
    dataset: DatasetName,
    prefix: Option<&str>,
) -> Result<PathBuf> {
    let base = format!("{}-{}-seed{}", config.model, dataset, config.seed);
    let name = match prefix {
        Some(p) => format!("{p}-{base}"),
        None => base,
    };
    let dir = Path::new(&config.out_dir).join(name);
    std::fs::create_dir_all(&dir)
        .map_err(|e| config_err(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct MetricsDocument<'a> {
    config_hash: &'a str,
    version: &'a str,
    report: &'a MetricReport,
}

fn metrics_json(hash: &str, report: &MetricReport) -> Result<String> {
    let doc = MetricsDocument { config_hash: hash, version: VERSION, report };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| config_err(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut line = serde_json::to_string(value).map_err(|e| config_err(e.to_string()))?;
    line.push('\n');
    Ok(line)
}

fn loss_curve_csv(hash: &str, records: &[EpochRecord]) -> String {
    let mut out = stamp(hash);
    out.push_str("epoch,train_loss,val_loss\n");
    for r in records {
        match r.val_loss {
            Some(v) => out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, v)),
            None => out.push_str(&format!("{},{},\n", r.epoch, r.train_loss)),
        }
    }
    out
}
