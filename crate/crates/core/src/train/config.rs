use serde::{Deserialize, Serialize};

use super::reinforce::BaselineSpec;
use super::reward::RewardSpec;
use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u32,
    /// Sampled trajectories per case per update (M).
    pub samples_per_case: usize,
    pub baseline: BaselineSpec,
    pub reward: RewardSpec,
    /// Epochs without validation improvement before stopping.
    pub patience: u32,
    pub seed: u64,
    pub supervised: AdamConfig,
    pub reinforcement: AdamConfig,
    /// Optimizer settings of the baseline CNN.
    pub baseline_cnn: AdamConfig,
    /// Cases per evaluation forward pass.
    pub eval_batch: usize,
    /// Stop after the epoch in which cumulative training time passes this.
    pub max_wall_seconds: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let desk = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        Self {
            batch_size: 8,
            epochs: 30,
            samples_per_case: 1,
            baseline: BaselineSpec::default(),
            reward: RewardSpec::default(),
            patience: 10,
            seed: 1,
            supervised: desk,
            reinforcement: desk,
            baseline_cnn: AdamConfig { weight_decay: 1e-4, ..desk },
            eval_batch: 20,
            max_wall_seconds: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for batch-norm, got {}",
                self.batch_size
            )));
        }
        if self.samples_per_case == 0 || self.epochs == 0 || self.eval_batch == 0 {
            return Err(Error::Config("samples_per_case, epochs and eval_batch must be positive".into()));
        }
        if let BaselineSpec::Ema { decay } = self.baseline {
            if !(0.0..1.0).contains(&decay) {
                return Err(Error::Config(format!("baseline decay must be in [0, 1), got {decay}")));
            }
        }
        if matches!(self.max_wall_seconds, Some(s) if !(s > 0.0)) {
            return Err(Error::Config("max_wall_seconds must be positive".into()));
        }
        self.supervised.validate()?;
        self.reinforcement.validate()?;
        self.baseline_cnn.validate()
    }
}
