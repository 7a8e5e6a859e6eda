use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Variance-reduction baseline subtracted from the return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineSpec {
    None,
    /// Exponential moving average of the batch-mean return, starting at 0.
    Ema {
        decay: f64,
    },
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec::Ema { decay: 0.9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBaseline {
    pub spec: BaselineSpec,
    pub value: f64,
}

impl RewardBaseline {
    pub fn new(spec: BaselineSpec) -> Self {
        Self { spec, value: 0.0 }
    }

    pub fn current(&self) -> f64 {
        match self.spec {
            BaselineSpec::None => 0.0,
            BaselineSpec::Ema { .. } => self.value,
        }
    }

    pub fn update(&mut self, rewards: &[f64]) {
        if let BaselineSpec::Ema { decay } = self.spec {
            if !rewards.is_empty() {
                let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
                self.value = decay * self.value + (1.0 - decay) * mean;
            }
        }
    }
}

/// Negated REINFORCE surrogate
/// `-(1/M) sum_i (R_i - b) sum_t log pi(l_t^i | s_t^i)`, where each entry of
/// `log_probs` is a `[M]` vector for one step. Descending it ascends `J`.
pub fn reinforce_surrogate(g: &mut Graph, log_probs: &[Var], rewards: &[f64], baseline: f64) -> Result<Var> {
    if log_probs.is_empty() || rewards.is_empty() {
        return Err(Error::invalid("reinforce_gradient", "no episodes"));
    }
    let mut total = log_probs[0];
    for &lp in &log_probs[1..] {
        total = g.add(total, lp)?;
    }
    let m = rewards.len() as f64;
    let weights: Vec<f64> = rewards.iter().map(|r| -(r - baseline) / m).collect();
    g.dot_const(total, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn ema_baseline_tracks_mean_reward() {
        let mut b = RewardBaseline::new(BaselineSpec::Ema { decay: 0.9 });
        assert_eq!(b.current(), 0.0);
        b.update(&[1.0, 0.0]);
        assert!((b.current() - 0.05).abs() < 1e-15);
        let mut none = RewardBaseline::new(BaselineSpec::None);
        none.update(&[1.0]);
        assert_eq!(none.current(), 0.0);
    }

    #[test]
    fn zero_advantage_gives_zero_gradient() {
        let mut g = Graph::new();
        let mu = g.input(Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.4]).unwrap());
        let sample = Tensor::new(vec![2, 3], vec![0.3, 0.1, -0.2, 0.2, 0.2, 0.2]).unwrap();
        let lp = g.gaussian_log_prob(mu, &sample, 0.15).unwrap();
        let s = reinforce_surrogate(&mut g, &[lp, lp], &[0.7, 0.7], 0.7).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(mu).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_episode_list_rejected() {
        let mut g = Graph::new();
        assert!(reinforce_surrogate(&mut g, &[], &[], 0.0).is_err());
    }
}
