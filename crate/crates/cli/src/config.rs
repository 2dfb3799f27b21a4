//! Experiment configuration: the JSON schema the CLI consumes, named
//! presets with tuned hyperparameters, and the per-model search spaces
//! handed to the tuner.

use crate::data::DatasetName;
use crate::error::{config_err, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};
use uqbench_core::hpo::{ConfigValue, Domain, SearchSpace, TrialConfig};

/// Schema version stamped into every artifact this harness writes.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hidden-layer width multipliers available to the ensemble tuner; a
/// choice of n expands to the two-layer architecture [2n, n].
pub const ENSEMBLE_WIDTH_CHOICES: [usize; 4] = [8, 16, 32, 64];

/// The model families the harness trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dgp,
    Dspp,
    Ensemble,
}

impl ModelKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "dgp" => Ok(ModelKind::Dgp),
            "dspp" => Ok(ModelKind::Dspp),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(config_err(format!(
                "unknown model {other:?}; expected dgp, dspp, or ensemble"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Dgp => "dgp",
            ModelKind::Dspp => "dspp",
            ModelKind::Ensemble => "ensemble",
        }
    }

    /// Whether the model is built from sparse GP layers (and therefore
    /// tunes inducing counts and GP architectures rather than widths).
    pub fn is_gp(&self) -> bool {
        matches!(self, ModelKind::Dgp | ModelKind::Dspp)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where the data comes from: a known dataset name, optionally with an
/// explicit file path, a nonstandard target column, or (for the
/// generated datasets) a row count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_column: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

impl DatasetSpec {
    pub fn named(name: DatasetName) -> Self {
        DatasetSpec { name: name.as_str().to_string(), path: None, target_column: None, size: None }
    }

    pub fn parsed_name(&self) -> Result<DatasetName> {
        DatasetName::parse(&self.name)
    }

    /// The CSV to read from; defaults to `data/<name>.csv` next to the
    /// working directory.
    pub fn resolved_path(&self) -> Result<PathBuf> {
        if let Some(path) = &self.path {
            return Ok(PathBuf::from(path));
        }
        Ok(PathBuf::from(format!("data/{}.csv", self.parsed_name()?.as_str())))
    }
}

fn default_lr() -> f64 {
    0.01
}

fn default_batch_size() -> usize {
    256
}

fn default_num_inducing() -> usize {
    128
}

fn default_num_members() -> usize {
    5
}

fn default_num_samples() -> usize {
    uqbench_core::deepgp::DEFAULT_SAMPLES
}

fn default_num_sites() -> usize {
    uqbench_core::dspp::DEFAULT_SITES
}

fn default_out_dir() -> String {
    "runs".to_string()
}

/// One experiment: a model, a dataset, and every knob the harness
/// exposes. Unset fields take the defaults baked into the schema, and
/// unknown fields are rejected rather than silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub dataset: DatasetSpec,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Training epochs; when unset the dataset's default applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Hidden-layer sizes: GP output dimensions for the GP models,
    /// neuron counts for the ensemble. Empty means no hidden layers.
    #[serde(default)]
    pub architecture: Vec<usize>,
    #[serde(default = "default_num_inducing")]
    pub num_inducing: usize,
    #[serde(default = "default_num_members")]
    pub num_members: usize,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default = "default_num_sites")]
    pub num_sites: usize,
    #[serde(default)]
    pub seed: u64,
    /// Whether shift runs sweep the full severity grid; off means
    /// severity 0 only.
    #[serde(default)]
    pub shift: bool,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
}

impl ExperimentConfig {
    pub fn new(model: ModelKind, dataset: DatasetSpec) -> Self {
        ExperimentConfig {
            model,
            dataset,
            lr: default_lr(),
            epochs: None,
            batch_size: default_batch_size(),
            architecture: Vec::new(),
            num_inducing: default_num_inducing(),
            num_members: default_num_members(),
            num_samples: default_num_samples(),
            num_sites: default_num_sites(),
            seed: 0,
            shift: false,
            out_dir: default_out_dir(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| config_err(e.to_string()))
    }

    /// First 16 hex characters of the SHA-256 of the canonical JSON
    /// form; stamps artifacts so results can be traced to a config.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self).map_err(|e| config_err(e.to_string()))?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect::<String>()[..16].to_string())
    }

    pub fn epochs_or_default(&self) -> Result<usize> {
        match self.epochs {
            Some(e) => Ok(e),
            None => Ok(self.dataset.parsed_name()?.default_epochs()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.parsed_name()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config_err(format!("lr must be positive and finite, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be at least 1"));
        }
        if self.epochs == Some(0) {
            return Err(config_err("epochs must be at least 1"));
        }
        if self.num_inducing == 0 {
            return Err(config_err("num_inducing must be at least 1"));
        }
        if self.num_members == 0 {
            return Err(config_err("num_members must be at least 1"));
        }
        if self.num_samples == 0 {
            return Err(config_err("num_samples must be at least 1"));
        }
        if self.num_sites == 0 {
            return Err(config_err("num_sites must be at least 1"));
        }
        if let Some(w) = self.architecture.iter().find(|&&w| w == 0) {
            let _ = w;
            return Err(config_err("architecture layers must have positive width"));
        }
        if let Some(size) = self.dataset.size {
            if size < 10 {
                return Err(config_err(format!("dataset size {size} is too small to split")));
            }
        }
        Ok(())
    }
}

/// Names accepted by `--preset`, one per model and real dataset.
pub const PRESET_NAMES: [&str; 6] =
    ["dgp-casp", "dspp-casp", "ensemble-casp", "dgp-esr", "dspp-esr", "ensemble-esr"];

/// Tuned configuration for a named model/dataset pairing.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (model, dataset, lr, architecture, count) = match name {
        "dgp-casp" => (ModelKind::Dgp, DatasetName::Casp, 0.1, vec![3], 159),
        "dspp-casp" => (ModelKind::Dspp, DatasetName::Casp, 0.055, vec![], 50),
        "ensemble-casp" => (ModelKind::Ensemble, DatasetName::Casp, 0.025, vec![128, 64], 9),
        "dgp-esr" => (ModelKind::Dgp, DatasetName::Esr, 0.1, vec![5, 2], 200),
        "dspp-esr" => (ModelKind::Dspp, DatasetName::Esr, 0.068, vec![5, 5, 2], 50),
        "ensemble-esr" => (ModelKind::Ensemble, DatasetName::Esr, 0.001, vec![128, 64], 10),
        other => {
            return Err(config_err(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    let mut config = ExperimentConfig::new(model, DatasetSpec::named(dataset));
    config.lr = lr;
    config.architecture = architecture;
    if model == ModelKind::Ensemble {
        config.num_members = count;
    } else {
        config.num_inducing = count;
    }
    Ok(config)
}

/// Architecture choices for the GP models, encoded as strings for the
/// categorical domain: hidden GP output dimensions joined by dashes,
/// with "none" for no hidden layers. The wide option matches the
/// dataset's scale (3 on the protein data, 5 on the seizure data).
pub fn gp_architecture_choices(dataset: DatasetName) -> Vec<String> {
    let wide = match dataset {
        DatasetName::Esr => "5",
        _ => "3",
    };
    vec![
        "none".to_string(),
        "1".to_string(),
        "1-1".to_string(),
        wide.to_string(),
        format!("{wide}-{wide}"),
    ]
}

/// Decode an architecture choice back into hidden-layer sizes.
pub fn parse_architecture_choice(choice: &str) -> Result<Vec<usize>> {
    if choice == "none" {
        return Ok(Vec::new());
    }
    choice
        .split('-')
        .map(|part| {
            part.parse::<usize>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| config_err(format!("bad architecture choice {choice:?}")))
        })
        .collect()
}

/// The search space the tuner explores for a model on a dataset:
/// learning rate on a log scale for everyone, plus inducing count and
/// GP architecture for the GP models, or member count and hidden width
/// for the ensemble.
pub fn search_space(model: ModelKind, dataset: DatasetName) -> Result<SearchSpace> {
    let lr = ("lr".to_string(), Domain::Continuous { lo: 1e-3, hi: 1e-1, log_scale: true });
    let dims = if model.is_gp() {
        vec![
            lr,
            ("num_inducing".to_string(), Domain::Integer { lo: 50, hi: 200 }),
            (
                "architecture".to_string(),
                Domain::Categorical { choices: gp_architecture_choices(dataset) },
            ),
        ]
    } else {
        vec![
            lr,
            ("num_members".to_string(), Domain::Integer { lo: 2, hi: 10 }),
            (
                "width".to_string(),
                Domain::Categorical {
                    choices: ENSEMBLE_WIDTH_CHOICES.iter().map(|w| w.to_string()).collect(),
                },
            ),
        ]
    };
    SearchSpace::new(dims).map_err(Into::into)
}

/// Copy a sampled trial's values into a config, expanding the encoded
/// choices into concrete architectures.
pub fn apply_trial(config: &ExperimentConfig, trial: &TrialConfig) -> Result<ExperimentConfig> {
    let mut out = config.clone();
    for (name, value) in trial {
        match (name.as_str(), value) {
            ("lr", v) => out.lr = v.as_f64()?,
            ("num_inducing", v) => out.num_inducing = v.as_usize()?,
            ("num_members", v) => out.num_members = v.as_usize()?,
            ("architecture", ConfigValue::Choice(c)) => {
                out.architecture = parse_architecture_choice(c)?;
            }
            ("width", ConfigValue::Choice(c)) => {
                let n: usize = c
                    .parse()
                    .map_err(|_| config_err(format!("bad width choice {c:?}")))?;
                out.architecture = vec![2 * n, n];
            }
            (other, _) => {
                return Err(config_err(format!("trial assigns unknown hyperparameter {other:?}")))
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn presets_pin_the_tuned_hyperparameters() {
        let cases: [(&str, ModelKind, &str, f64, &[usize], usize, usize); 6] = [
            ("dgp-casp", ModelKind::Dgp, "casp", 0.1, &[3], 159, 20),
            ("dspp-casp", ModelKind::Dspp, "casp", 0.055, &[], 50, 20),
            ("ensemble-casp", ModelKind::Ensemble, "casp", 0.025, &[128, 64], 9, 20),
            ("dgp-esr", ModelKind::Dgp, "esr", 0.1, &[5, 2], 200, 30),
            ("dspp-esr", ModelKind::Dspp, "esr", 0.068, &[5, 5, 2], 50, 30),
            ("ensemble-esr", ModelKind::Ensemble, "esr", 0.001, &[128, 64], 10, 30),
        ];
        for (name, model, dataset, lr, arch, count, epochs) in cases {
            let config = preset(name).unwrap();
            assert_eq!(config.model, model, "{name}");
            assert_eq!(config.dataset.name, dataset, "{name}");
            assert_eq!(config.lr, lr, "{name}");
            assert_eq!(config.architecture, arch, "{name}");
            if model == ModelKind::Ensemble {
                assert_eq!(config.num_members, count, "{name}");
            } else {
                assert_eq!(config.num_inducing, count, "{name}");
            }
            assert_eq!(config.epochs_or_default().unwrap(), epochs, "{name}");
            config.validate().unwrap();
        }
        assert!(preset("dgp-mnist").is_err());
    }

    #[test]
    fn minimal_json_takes_the_documented_defaults() {
        let config: ExperimentConfig =
            serde_json::from_str(r#"{"model":"dgp","dataset":{"name":"casp"}}"#).unwrap();
        assert_eq!(config.lr, 0.01);
        assert_eq!(config.epochs, None);
        assert_eq!(config.batch_size, 256);
        assert!(config.architecture.is_empty());
        assert_eq!(config.num_inducing, 128);
        assert_eq!(config.num_members, 5);
        assert_eq!(config.num_samples, 10);
        assert_eq!(config.num_sites, 8);
        assert_eq!(config.seed, 0);
        assert!(!config.shift);
        assert_eq!(config.out_dir, "runs");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let result: std::result::Result<ExperimentConfig, _> = serde_json::from_str(
            r#"{"model":"dgp","dataset":{"name":"casp"},"learning_rate":0.1}"#,
        );
        assert!(result.is_err());
        let result: std::result::Result<ExperimentConfig, _> = serde_json::from_str(
            r#"{"model":"dgp","dataset":{"name":"casp","sep":";"}}"#,
        );
        assert!(result.is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = preset("dgp-casp").unwrap();
        let b = preset("dgp-casp").unwrap();
        let hash = a.config_hash().unwrap();
        assert_eq!(hash.len(), 16);
        assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(hash, b.config_hash().unwrap());
        let mut c = preset("dgp-casp").unwrap();
        c.lr = 0.2;
        assert_ne!(hash, c.config_hash().unwrap());
    }

    #[test]
    fn resolved_path_defaults_to_the_data_directory() {
        let spec = DatasetSpec::named(DatasetName::Casp);
        assert_eq!(spec.resolved_path().unwrap(), PathBuf::from("data/casp.csv"));
        let mut spec = DatasetSpec::named(DatasetName::Esr);
        spec.path = Some("/tmp/eeg.csv".to_string());
        assert_eq!(spec.resolved_path().unwrap(), PathBuf::from("/tmp/eeg.csv"));
    }

    #[test]
    fn search_spaces_match_the_model_family() {
        let gp = search_space(ModelKind::Dgp, DatasetName::Casp).unwrap();
        let names: Vec<&str> = gp.dims.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["lr", "num_inducing", "architecture"]);
        match &gp.dims[2].1 {
            Domain::Categorical { choices } => {
                assert_eq!(choices, &["none", "1", "1-1", "3", "3-3"]);
            }
            other => panic!("expected categorical architecture, got {other:?}"),
        }
        let esr = search_space(ModelKind::Dspp, DatasetName::Esr).unwrap();
        match &esr.dims[2].1 {
            Domain::Categorical { choices } => {
                assert_eq!(choices, &["none", "1", "1-1", "5", "5-5"]);
            }
            other => panic!("expected categorical architecture, got {other:?}"),
        }
        let ens = search_space(ModelKind::Ensemble, DatasetName::Casp).unwrap();
        let names: Vec<&str> = ens.dims.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["lr", "num_members", "width"]);
    }

    #[test]
    fn apply_trial_expands_choices_into_architectures() {
        let base = ExperimentConfig::new(ModelKind::Ensemble, DatasetSpec::named(DatasetName::Casp));
        let mut trial: TrialConfig = BTreeMap::new();
        trial.insert("lr".to_string(), ConfigValue::Float(0.05));
        trial.insert("num_members".to_string(), ConfigValue::Int(7));
        trial.insert("width".to_string(), ConfigValue::Choice("16".to_string()));
        let applied = apply_trial(&base, &trial).unwrap();
        assert_eq!(applied.lr, 0.05);
        assert_eq!(applied.num_members, 7);
        assert_eq!(applied.architecture, [32, 16]);

        let base = ExperimentConfig::new(ModelKind::Dgp, DatasetSpec::named(DatasetName::Esr));
        let mut trial: TrialConfig = BTreeMap::new();
        trial.insert("architecture".to_string(), ConfigValue::Choice("5-5".to_string()));
        trial.insert("num_inducing".to_string(), ConfigValue::Int(73));
        let applied = apply_trial(&base, &trial).unwrap();
        assert_eq!(applied.architecture, [5, 5]);
        assert_eq!(applied.num_inducing, 73);

        let mut trial: TrialConfig = BTreeMap::new();
        trial.insert("dropout".to_string(), ConfigValue::Float(0.5));
        assert!(apply_trial(&base, &trial).is_err());
    }

    #[test]
    fn architecture_choices_round_trip() {
        assert_eq!(parse_architecture_choice("none").unwrap(), Vec::<usize>::new());
        assert_eq!(parse_architecture_choice("1").unwrap(), [1]);
        assert_eq!(parse_architecture_choice("5-5").unwrap(), [5, 5]);
        assert!(parse_architecture_choice("").is_err());
        assert!(parse_architecture_choice("0").is_err());
        assert!(parse_architecture_choice("3x3").is_err());
    }

    #[test]
    fn validation_rejects_nonsense() {
        let mut config = preset("dgp-casp").unwrap();
        config.lr = 0.0;
        assert!(config.validate().is_err());
        let mut config = preset("dgp-casp").unwrap();
        config.architecture = vec![3, 0];
        assert!(config.validate().is_err());
        let mut config = preset("dgp-casp").unwrap();
        config.dataset.name = "imagenet".to_string();
        assert!(config.validate().is_err());
        let mut config = preset("dgp-casp").unwrap();
        config.epochs = Some(0);
        assert!(config.validate().is_err());
    }
}
