//! Experiment configuration: a JSON document mirroring the pipeline stages.
//! Every field has a default, so a config file only needs the overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pagnn_core::losses::LossConfig;
use pagnn_core::meta::{FineTuneConfig, MetaConfig};
use pagnn_core::model::ModelConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub n_subgraphs: usize,
    pub data_seed: u64,
    /// Fraction of each clean graph's nodes forming its labeled pool.
    pub labeled_frac: f64,
    /// Train/validation fractions over the target's labeled nodes; the rest
    /// is the test split.
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_nodes: 1000,
            n_classes: 4,
            p_in: 0.10,
            p_out: 0.01,
            feature_dim: 16,
            feature_noise: 1.0,
            n_subgraphs: 5,
            data_seed: 7,
            labeled_frac: 0.4,
            train_frac: 0.1,
            val_frac: 0.2,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Random,
    Greedy,
    Targeted,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Target-graph budgets as fractions of the clean edge count.
    pub budgets: Vec<f64>,
    /// Budget of the fabricated attacks on clean graphs.
    pub clean_budget: f64,
    pub surrogate_steps: usize,
    /// Targeted attack: victims and insertions per victim.
    pub n_targets: usize,
    pub per_target_budget: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Greedy,
            budgets: vec![0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
            clean_budget: 0.10,
            surrogate_steps: 150,
            n_targets: 50,
            per_target_budget: 5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LossGridConfig {
    pub lambda: f64,
    pub eta: f64,
    /// Sweep grids; `None` means the single configured value.
    pub lambda_grid: Option<Vec<f64>>,
    pub eta_grid: Option<Vec<f64>>,
}

impl Default for LossGridConfig {
    fn default() -> Self {
        LossGridConfig {
            lambda: 1.0,
            eta: 100.0,
            lambda_grid: None,
            eta_grid: None,
        }
    }
}

impl LossGridConfig {
    pub fn base(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            eta: self.eta,
        }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.lambda_grid.clone().unwrap_or_else(|| vec![self.lambda])
    }

    pub fn etas(&self) -> Vec<f64> {
        self.eta_grid.clone().unwrap_or_else(|| vec![self.eta])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub attack: AttackConfig,
    pub model: ModelConfig,
    pub loss: LossGridConfig,
    pub meta: MetaConfig,
    pub fine_tune: FineTuneConfig,
    pub seeds: Vec<u64>,
    /// Methods exercised by `sweep`.
    pub sweep_methods: Vec<String>,
    pub sweep_budgets: Option<Vec<f64>>,
    pub preprocess_threshold: f64,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            attack: AttackConfig::default(),
            model: ModelConfig::default(),
            loss: LossGridConfig::default(),
            meta: MetaConfig::default(),
            fine_tune: FineTuneConfig::default(),
            seeds: (0..10).collect(),
            sweep_methods: vec!["pagnn".into()],
            sweep_budgets: None,
            preprocess_threshold: 0.0,
            out_dir: PathBuf::from("out"),
            workers: 0,
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "config io: {}", m),
            ConfigError::Parse(m) => write!(f, "config parse: {}", m),
            ConfigError::Invalid(m) => write!(f, "invalid config: {}", m),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {}", path.display(), e)))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return invalid("seeds list is empty".into());
        }
        if self.attack.budgets.is_empty() {
            return invalid("attack budget grid is empty".into());
        }
        for &b in &self.attack.budgets {
            if !(0.0..=1.0).contains(&b) {
                return invalid(format!("budget {} out of [0,1]", b));
            }
        }
        if self.loss.lambdas().is_empty() || self.loss.etas().is_empty() {
            return invalid("loss grids must be non-empty".into());
        }
        if self.dataset.n_subgraphs < 2 {
            return invalid("need at least 2 subgraphs (1 target + 1 clean)".into());
        }
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.meta
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        pagnn_core::losses::LossConfig {
            lambda: self.loss.lambda,
            eta: self.loss.eta,
        }
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
