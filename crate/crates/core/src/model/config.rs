use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::ENCODED_DIM;

/// Convolutional blocks: conv(k, same padding) -> batch-norm -> ReLU -> max-pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkSpec {
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Pool window per block.
    pub pools: Vec<usize>,
}

impl TrunkSpec {
    pub fn validate(&self, input_side: usize) -> Result<usize> {
        if self.channels.is_empty() || self.channels.len() != self.pools.len() {
            return Err(Error::Config(format!(
                "trunk needs one pool window per block: {} channels vs {} pools",
                self.channels.len(),
                self.pools.len()
            )));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("trunk kernel must be odd, got {}", self.kernel)));
        }
        if self.channels.contains(&0) || self.pools.contains(&0) {
            return Err(Error::Config("trunk channels and pools must be positive".into()));
        }
        let mut side = input_side;
        for (i, &p) in self.pools.iter().enumerate() {
            if !side.is_multiple_of(p) {
                return Err(Error::Config(format!("pool {p} of block {i} does not divide spatial side {side}")));
            }
            side /= p;
        }
        Ok(side)
    }

    /// Length of the flattened trunk output for a cubic input of `input_side`.
    pub fn output_len(&self, input_side: usize) -> Result<usize> {
        let side = self.validate(input_side)?;
        Ok(self.channels.last().unwrap() * side * side * side)
    }

    pub fn parameter_count(&self, in_channels: usize) -> usize {
        let k3 = self.kernel.pow(3);
        let mut c_in = in_channels;
        let mut n = 0;
        for &c in &self.channels {
            n += c * c_in * k3 + c + 2 * c;
            c_in = c;
        }
        n
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub glimpse_side: usize,
    pub steps: usize,
    pub hidden: usize,
    /// Standard deviation of the location policy, normalized coordinates.
    pub sigma: f64,
    pub trunk: TrunkSpec,
    pub context_dim: usize,
    /// Evaluate with `l = mu` instead of sampling.
    pub deterministic_eval: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            glimpse_side: 16,
            steps: 6,
            hidden: 128,
            sigma: 0.15,
            trunk: TrunkSpec { channels: vec![8, 16, 32, 64], kernel: 3, pools: vec![2; 4] },
            context_dim: ENCODED_DIM,
            deterministic_eval: true,
        }
    }
}

impl ModelConfig {
    pub fn paper_scale() -> Self {
        Self { glimpse_side: 40, hidden: 512, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.glimpse_side == 0 || self.steps == 0 || self.hidden == 0 {
            return Err(Error::Config("glimpse_side, steps and hidden must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("policy sigma must be positive, got {}", self.sigma)));
        }
        if self.context_dim != ENCODED_DIM {
            return Err(Error::Config(format!("context_dim must be {ENCODED_DIM}, got {}", self.context_dim)));
        }
        let flat = self.trunk.output_len(self.glimpse_side)?;
        if flat == 0 {
            return Err(Error::Config("glimpse trunk leaves no spatial output".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub volume_side: usize,
    pub trunk: TrunkSpec,
    pub fc_hidden: usize,
    pub dropout: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            volume_side: 64,
            trunk: TrunkSpec { channels: vec![8, 16, 32, 64], kernel: 3, pools: vec![4, 4, 2, 2] },
            fc_hidden: 128,
            dropout: 0.4,
        }
    }
}

impl BaselineConfig {
    pub fn paper_scale() -> Self {
        Self {
            volume_side: 192,
            trunk: TrunkSpec { pools: vec![4, 4, 4, 3], ..Self::default().trunk },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk.validate(self.volume_side)?;
        if self.fc_hidden == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("baseline fc_hidden must be positive and dropout in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> Result<usize> {
        let flat = self.trunk.output_len(self.volume_side)?;
        Ok(self.trunk.parameter_count(1) + flat * self.fc_hidden + self.fc_hidden + self.fc_hidden + 1)
    }
}
