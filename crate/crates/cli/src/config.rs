//! Experiment configuration, read from a TOML key-value file.

use opf_sense::mlp::{LossReduction, TrainConfig, WeightInit};
use opf_sense::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: String,
    /// Number of load draws labeled for the pool.
    pub pool: usize,
    pub range: (f64, f64),
    pub seed: u64,
    /// Hidden layer widths; chosen from the network size when absent.
    pub hidden: Option<Vec<usize>>,
    pub sizes: Vec<usize>,
    pub runs: Vec<usize>,
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    /// Jacobian weight of the sensitivity-informed variant.
    pub rho: f64,
    pub reduction: LossReduction,
    pub init: WeightInit,
    pub scale_inputs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            case: "case39".into(),
            pool: 200,
            range: (0.8, 1.2),
            seed: 0,
            hidden: None,
            sizes: vec![10],
            runs: vec![5],
            epochs: t.epochs,
            lr0: t.lr0,
            decay: t.decay,
            decay_every: t.decay_every,
            batch_size: t.batch_size,
            rho: t.rho,
            reduction: t.reduction,
            init: WeightInit::default(),
            scale_inputs: false,
        }
    }
}

/// Hidden widths used when the configuration names none.
pub fn default_hidden(n_bus: usize) -> Vec<usize> {
    if n_bus < 30 {
        vec![16, 16]
    } else if n_bus < 100 {
        vec![256; 4]
    } else {
        vec![512; 4]
    }
}

impl ExperimentConfig {
    /// Pool, training sizes, runs and epochs of the full-size protocol.
    pub fn paper_scale(mut self) -> Self {
        self.pool = 1000;
        self.sizes = vec![10, 50, 100, 250];
        self.runs = vec![20, 20, 10, 4];
        self.epochs = 5000;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() != self.runs.len() {
            return Err(Error::Config("sizes and runs must have the same length".into()));
        }
        if self.pool == 0 {
            return Err(Error::Config("pool must be positive".into()));
        }
        self.train_config(self.rho).validate()
    }

    pub fn hidden_for(&self, n_bus: usize) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| default_hidden(n_bus))
    }

    /// Optimizer settings shared by both variants; only `rho` differs.
    pub fn train_config(&self, rho: f64) -> TrainConfig {
        TrainConfig {
            rho,
            lr0: self.lr0,
            decay: self.decay,
            decay_every: self.decay_every,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            reduction: self.reduction,
        }
    }
}
