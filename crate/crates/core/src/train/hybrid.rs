use rand::Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::reinforce::{reinforce_surrogate, RewardBaseline};
use super::reward::compute_reward;
use crate::autodiff::{AdamState, BnStats, Gradients, Graph, Group};
use crate::error::{Error, Result};
use crate::model::{NeuroDram, RolloutMode};
use crate::volume::LabeledCase;

pub struct Optimizers {
    pub supervised: AdamState,
    pub reinforcement: AdamState,
}

impl Optimizers {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            supervised: AdamState::new(cfg.supervised, Group::Supervised),
            reinforcement: AdamState::new(cfg.reinforcement, Group::Reinforcement),
        }
    }

    pub fn set_epoch(&mut self, epoch: u32) {
        self.supervised.set_epoch(epoch);
        self.reinforcement.set_epoch(epoch);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    /// Summed BCE over the sampled episodes.
    pub bce: f64,
    pub surrogate: f64,
    pub mean_reward: f64,
    pub accuracy: f64,
    /// Baseline value used for this step.
    pub baseline: f64,
    pub episodes: usize,
}

/// Both losses and their gradients for one batch, before any update.
pub struct HybridPass {
    pub report: StepReport,
    pub bce_grads: Gradients,
    pub reinforce_grads: Gradients,
    pub rewards: Vec<f64>,
    pub bn_stats: Vec<BnStats>,
}

/// Rolls out `samples_per_case` sampled episodes per case on `graph` and
/// back-propagates the BCE and the REINFORCE surrogate separately.
pub fn hybrid_pass(
    model: &NeuroDram,
    graph: Graph,
    batch: &[&LabeledCase],
    cfg: &TrainConfig,
    baseline: f64,
    rng: &mut impl Rng,
) -> Result<HybridPass> {
    if batch.len() < 2 {
        return Err(Error::invalid("hybrid_train_step", "batch size must be at least 2"));
    }
    let episodes: Vec<&LabeledCase> = (0..cfg.samples_per_case).flat_map(|_| batch.iter().copied()).collect();
    let mut roll = model.rollout_on(graph, &episodes, RolloutMode::Train, rng)?;
    let g = &mut roll.graph;

    let labels: Vec<f64> = episodes.iter().map(|c| f64::from(c.label)).collect();
    let bce = g.bce_with_logits(roll.logits, &labels)?;
    let steps = model.config.steps;
    let rewards: Vec<f64> =
        roll.episodes.iter().map(|e| compute_reward(e.prediction, e.label, cfg.reward, steps)).collect();
    let surrogate = reinforce_surrogate(g, &roll.log_probs, &rewards, baseline)?;

    let bce_grads = g.backward(bce)?;
    let reinforce_grads = g.backward(surrogate)?;
    let n = roll.episodes.len() as f64;
    let correct = roll.episodes.iter().filter(|e| e.predicted_class() == e.label).count() as f64;
    let report = StepReport {
        bce: g.value(bce).item(),
        surrogate: g.value(surrogate).item(),
        mean_reward: rewards.iter().sum::<f64>() / n,
        accuracy: correct / n,
        baseline,
        episodes: roll.episodes.len(),
    };
    Ok(HybridPass { report, bce_grads, reinforce_grads, rewards, bn_stats: roll.bn_stats })
}

/// One hybrid update: BCE drives the supervised group, REINFORCE the
/// reinforcement group, one ADAM step each.
pub fn hybrid_train_step(
    model: &mut NeuroDram,
    opt: &mut Optimizers,
    baseline: &mut RewardBaseline,
    batch: &[&LabeledCase],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<StepReport> {
    let pass = hybrid_pass(model, Graph::new(), batch, cfg, baseline.current(), rng)?;
    opt.supervised.step(&mut model.params, &pass.bce_grads)?;
    opt.reinforcement.step(&mut model.params, &pass.reinforce_grads)?;
    model.bn_stats = pass.bn_stats;
    baseline.update(&pass.rewards);
    Ok(pass.report)
}
