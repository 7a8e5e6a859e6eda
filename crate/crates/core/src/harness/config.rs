use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BaselineConfig, ModelConfig};
use crate::train::TrainConfig;
use crate::volume::SyntheticConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic: SyntheticConfig,
    pub subjects_per_class: usize,
    pub scans_per_subject: usize,
    /// Train, validation and test fractions of subjects.
    pub split_ratios: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticConfig::default(),
            subjects_per_class: 140,
            scans_per_subject: 1,
            split_ratios: [5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0],
        }
    }
}

/// Everything one experiment needs. Every section may be omitted from the
/// JSON file, in which case its defaults apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds data generation, the split, model initialization and training.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub baseline: BaselineConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 7,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            baseline: BaselineConfig::default(),
            train: TrainConfig::default(),
        };
        cfg.apply_seed(7);
        cfg
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.synthetic.seed = seed;
        self.train.seed = seed;
    }

    /// Checks each section and their agreement, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let at = |section: &str, e: Error| Error::Config(format!("{section}: {e}"));
        self.data.synthetic.validate().map_err(|e| at("data.synthetic", e))?;
        self.model.validate().map_err(|e| at("model", e))?;
        self.baseline.validate().map_err(|e| at("baseline", e))?;
        self.train.validate().map_err(|e| at("train", e))?;
        let syn = &self.data.synthetic;
        if syn.glimpse_side != self.model.glimpse_side {
            return Err(Error::Config(format!(
                "data.synthetic.glimpse_side ({}) differs from model.glimpse_side ({})",
                syn.glimpse_side, self.model.glimpse_side
            )));
        }
        if syn.pool_stages as usize != self.model.trunk.pools.len() {
            return Err(Error::Config(format!(
                "data.synthetic.pool_stages ({}) differs from the glimpse trunk's {} blocks",
                syn.pool_stages,
                self.model.trunk.pools.len()
            )));
        }
        if self.baseline.volume_side != syn.volume_side {
            return Err(Error::Config(format!(
                "baseline.volume_side ({}) differs from data.synthetic.volume_side ({})",
                self.baseline.volume_side, syn.volume_side
            )));
        }
        if self.data.subjects_per_class == 0 || self.data.scans_per_subject == 0 {
            return Err(Error::Config("data.subjects_per_class and data.scans_per_subject must be positive".into()));
        }
        crate::volume::split_counts(2 * self.data.subjects_per_class, self.data.split_ratios)
            .map_err(|e| at("data.split_ratios", e))?;
        Ok(())
    }
}
