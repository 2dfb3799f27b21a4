//! Dataset ingestion: CSV loaders for the protein-structure regression and
//! seizure-recognition classification corpora, synthetic generators, seeded
//! 80:20 splits, and train-only feature standardization.

use crate::error::{config_err, ingestion, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use uqbench_core::likelihood::TaskKind;
use uqbench_core::seeding;
use uqbench_core::train::gather_rows;
use uqbench_core::Tensor;

/// Expected shape of the protein CSV: data rows and feature columns
/// (plus one target column).
pub const CASP_ROWS: usize = 45_730;
pub const CASP_FEATURES: usize = 9;

/// Expected shape of the seizure CSV: data rows and feature columns
/// (plus one label column holding classes 1..=5).
pub const ESR_ROWS: usize = 11_500;
pub const ESR_FEATURES: usize = 178;

/// Default row count for the generated datasets.
pub const SYNTHETIC_ROWS: usize = 500;

/// The datasets the harness knows how to load or generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetName {
    Casp,
    Esr,
    SyntheticRegression,
    SyntheticClassification,
}

impl DatasetName {
    /// Parse a CLI or config name; `synthetic` is shorthand for the
    /// regression generator.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "casp" => Ok(DatasetName::Casp),
            "esr" => Ok(DatasetName::Esr),
            "synthetic" | "synthetic-regression" => Ok(DatasetName::SyntheticRegression),
            "synthetic-classification" => Ok(DatasetName::SyntheticClassification),
            other => Err(config_err(format!(
                "unknown dataset {other:?}; expected casp, esr, synthetic-regression, \
                 or synthetic-classification"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Casp => "casp",
            DatasetName::Esr => "esr",
            DatasetName::SyntheticRegression => "synthetic-regression",
            DatasetName::SyntheticClassification => "synthetic-classification",
        }
    }

    /// Epoch count used when a config does not set one.
    pub fn default_epochs(&self) -> usize {
        match self {
            DatasetName::Esr => 30,
            _ => 20,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self, DatasetName::SyntheticRegression | DatasetName::SyntheticClassification)
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A loaded, standardized, split dataset. Standardization statistics come
/// from the training rows alone and are applied to every row; the index
/// vectors partition `0..rows` into train, validation, and test.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: DatasetName,
    pub task: TaskKind,
    features: Tensor,
    targets: Tensor,
    /// Raw-space per-feature means of the training rows.
    pub feature_means: Vec<f64>,
    /// Raw-space per-feature standard deviations of the training rows.
    pub feature_stds: Vec<f64>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Digest binding the standardization statistics to the training
    /// index set they were computed from.
    pub stats_fingerprint: String,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn targets(&self) -> &Tensor {
        &self.targets
    }

    pub fn classes(&self) -> Option<usize> {
        match self.task {
            TaskKind::Classification { classes } => Some(classes),
            TaskKind::Regression => None,
        }
    }

    fn xy(&self, idx: &[usize]) -> (Tensor, Tensor) {
        (gather_rows(&self.features, idx), gather_rows(&self.targets, idx))
    }

    pub fn train_xy(&self) -> (Tensor, Tensor) {
        self.xy(&self.train_idx)
    }

    pub fn val_xy(&self) -> (Tensor, Tensor) {
        self.xy(&self.val_idx)
    }

    pub fn test_xy(&self) -> (Tensor, Tensor) {
        self.xy(&self.test_idx)
    }

    /// Per-feature standard deviation over the training rows of the
    /// standardized matrix, as used for scaling perturbations.
    pub fn train_feature_stds(&self) -> Vec<f64> {
        column_stats(&self.features, &self.train_idx).1
    }

    /// Leakage guard: recompute the standardization statistics from the
    /// training rows and require them to be the ones the matrix was
    /// standardized with. Training columns must have |mean| <= 1e-10 and
    /// std within 1e-10 of 1 (constant columns stay at std 0), and the
    /// stored fingerprint must match the training index set.
    pub fn verify_no_leakage(&self) -> Result<()> {
        let (means, stds) = column_stats(&self.features, &self.train_idx);
        for j in 0..self.num_features() {
            if means[j].abs() > 1e-10 {
                return Err(ingestion(format!(
                    "feature {j}: training mean {} after standardization",
                    means[j]
                )));
            }
            if (stds[j] - 1.0).abs() > 1e-10 && stds[j] > 1e-9 {
                return Err(ingestion(format!(
                    "feature {j}: training std {} after standardization",
                    stds[j]
                )));
            }
        }
        let expected = fingerprint(&self.train_idx, &self.feature_means, &self.feature_stds);
        if expected != self.stats_fingerprint {
            return Err(ingestion(
                "standardization fingerprint does not match the training indices",
            ));
        }
        Ok(())
    }
}

/// Column means and population standard deviations over the given rows.
fn column_stats(features: &Tensor, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = features.cols();
    let n = rows.len() as f64;
    let mut means = vec![0.0; d];
    for &i in rows {
        for (j, &v) in features.row_slice(i).iter().enumerate() {
            means[j] += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut vars = vec![0.0; d];
    for &i in rows {
        for (j, &v) in features.row_slice(i).iter().enumerate() {
            vars[j] += (v - means[j]).powi(2);
        }
    }
    let stds = vars.iter().map(|v| (v / n).sqrt()).collect();
    (means, stds)
}

fn fingerprint(train_idx: &[usize], means: &[f64], stds: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for &i in train_idx {
        hasher.update((i as u64).to_le_bytes());
    }
    for &v in means.iter().chain(stds) {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Shuffled 80:20 outer split, then 80:20 of the outer training rows into
/// train and validation; each returned index set is sorted.
fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::substream(seed, "split-outer", 0));
    let mut test = order.split_off(n - n / 5);
    order.shuffle(&mut seeding::substream(seed, "split-inner", 0));
    let mut val = order.split_off(order.len() - order.len() / 5);
    let mut train = order;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    (train, val, test)
}

fn assemble(
    name: DatasetName,
    task: TaskKind,
    mut features: Tensor,
    targets: Tensor,
    seed: u64,
) -> Result<Dataset> {
    let n = features.rows();
    if n < 10 {
        return Err(config_err(format!("need at least 10 rows to split 80:20 twice, got {n}")));
    }
    let (train_idx, val_idx, test_idx) = split_indices(n, seed);
    let (feature_means, feature_stds) = column_stats(&features, &train_idx);
    let d = features.cols();
    for i in 0..n {
        for j in 0..d {
            let divisor = if feature_stds[j] > 0.0 { feature_stds[j] } else { 1.0 };
            let v = (features.at(i, j) - feature_means[j]) / divisor;
            features.data_mut()[i * d + j] = v;
        }
    }
    let stats_fingerprint = fingerprint(&train_idx, &feature_means, &feature_stds);
    Ok(Dataset {
        name,
        task,
        features,
        targets,
        feature_means,
        feature_stds,
        train_idx,
        val_idx,
        test_idx,
        stats_fingerprint,
    })
}

/// Parse one CSV table with a header row: every cell numeric and finite,
/// the `target_col`-th column split out from the features. Errors carry
/// 1-based file line numbers (the header is line 1).
fn read_table(
    path: &Path,
    expected_cols: usize,
    target_col: usize,
    expected_rows: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| ingestion(format!("{}: {e}", path.display())))?;
    let mut features = Vec::with_capacity(expected_rows * (expected_cols - 1));
    let mut targets = Vec::with_capacity(expected_rows);
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record =
            record.map_err(|e| ingestion(format!("{}: line {line}: {e}", path.display())))?;
        if record.len() != expected_cols {
            return Err(ingestion(format!(
                "{}: line {line}: expected {expected_cols} columns, found {}",
                path.display(),
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                ingestion(format!(
                    "{}: line {line}, column {}: non-numeric value {cell:?}",
                    path.display(),
                    j + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(ingestion(format!(
                    "{}: line {line}, column {}: non-finite value {cell:?}",
                    path.display(),
                    j + 1
                )));
            }
            if j == target_col {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    if targets.len() != expected_rows {
        return Err(ingestion(format!(
            "{}: expected {expected_rows} data rows, found {}",
            path.display(),
            targets.len()
        )));
    }
    Ok((Tensor::new(vec![expected_rows, expected_cols - 1], features), targets))
}

/// Load the protein regression table: a real-valued target column
/// (default the first) plus nine physicochemical features.
pub fn load_casp(path: &Path, seed: u64, target_column: Option<usize>) -> Result<Dataset> {
    let target = target_column.unwrap_or(0);
    if target > CASP_FEATURES {
        return Err(config_err(format!("target column {target} outside 0..={CASP_FEATURES}")));
    }
    let (features, targets) = read_table(path, CASP_FEATURES + 1, target, CASP_ROWS)?;
    assemble(DatasetName::Casp, TaskKind::Regression, features, Tensor::col(&targets), seed)
}

/// Load the seizure classification table: 178 EEG features plus a label
/// column (default the last) holding classes 1..=5, binarized as
/// {1 -> 1, 2..=5 -> 0}.
pub fn load_esr(path: &Path, seed: u64, label_column: Option<usize>) -> Result<Dataset> {
    let label = label_column.unwrap_or(ESR_FEATURES);
    if label > ESR_FEATURES {
        return Err(config_err(format!("label column {label} outside 0..={ESR_FEATURES}")));
    }
    let (features, raw_labels) = read_table(path, ESR_FEATURES + 1, label, ESR_ROWS)?;
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (i, &v) in raw_labels.iter().enumerate() {
        if v.fract() != 0.0 || !(1.0..=5.0).contains(&v) {
            return Err(ingestion(format!(
                "{}: line {}: unknown label {v}; expected an integer in 1..=5",
                path.display(),
                i + 2
            )));
        }
        labels.push(if v == 1.0 { 1.0 } else { 0.0 });
    }
    assemble(
        DatasetName::Esr,
        TaskKind::Classification { classes: 2 },
        features,
        Tensor::col(&labels),
        seed,
    )
}

/// Load one of the file-backed datasets with its default column layout.
pub fn load_dataset(path: &Path, name: DatasetName, seed: u64) -> Result<Dataset> {
    match name {
        DatasetName::Casp => load_casp(path, seed, None),
        DatasetName::Esr => load_esr(path, seed, None),
        other => Err(config_err(format!("dataset {other} is generated, not loaded from a file"))),
    }
}

/// 1-D regression on a noisy sine: x ~ U(-3, 3), y = sin(x) + 0.1 eps.
pub fn synthetic_regression(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeding::substream(seed, "synthetic-regression", 0);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random::<f64>() * 6.0 - 3.0;
        let e: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push(x.sin() + 0.1 * e);
    }
    assemble(
        DatasetName::SyntheticRegression,
        TaskKind::Regression,
        Tensor::col(&xs),
        Tensor::col(&ys),
        seed,
    )
}

/// Two-cluster binary classification in 2-D: class c is centered at
/// (-1, -1) or (1, 1) with isotropic noise 0.5, classes alternating.
pub fn synthetic_classification(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeding::substream(seed, "synthetic-classification", 0);
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let center = if c == 1 { 1.0 } else { -1.0 };
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        features.push(center + 0.5 * e1);
        features.push(center + 0.5 * e2);
        labels.push(c as f64);
    }
    assemble(
        DatasetName::SyntheticClassification,
        TaskKind::Classification { classes: 2 },
        Tensor::new(vec![n, 2], features),
        Tensor::col(&labels),
        seed,
    )
}

/// Generate a synthetic dataset by name.
pub fn synthetic_dataset(name: DatasetName, n: usize, seed: u64) -> Result<Dataset> {
    match name {
        DatasetName::SyntheticRegression => synthetic_regression(n, seed),
        DatasetName::SyntheticClassification => synthetic_classification(n, seed),
        other => Err(config_err(format!("dataset {other} is loaded from a file, not generated"))),
    }
}
