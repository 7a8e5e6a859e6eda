use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::hybrid::{hybrid_train_step, Optimizers};
use super::metrics::MetricsReport;
use super::reinforce::RewardBaseline;
use crate::autodiff::{AdamState, Group};
use crate::error::{Error, Result};
use crate::model::{BaselineCnn, Model, NeuroDram};
use crate::volume::LabeledCase;

/// Wall-clock measurements; the only non-deterministic part of a log record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Mean per-episode BCE over the epoch.
    pub bce: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
    pub train_accuracy: f64,
    pub lr: f64,
    pub val_metrics: MetricsReport,
    pub improved: bool,
    pub timing: Timing,
}

pub struct FitResult {
    pub best: Model,
    pub best_epoch: u32,
    pub best_val: MetricsReport,
    pub log: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl FitResult {
    pub fn train_seconds(&self) -> f64 {
        self.log.iter().map(|r| r.timing.train_seconds).sum()
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        self.train_seconds() / self.log.len().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochLimit,
    Patience,
    WallBudget,
}

/// Tracks the best validation score; training stops once `patience`
/// epochs have passed without a strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: u32,
    pub best_epoch: Option<u32>,
    pub best_score: f64,
}

impl EarlyStopping {
    pub fn new(patience: u32) -> Self {
        Self { patience, best_epoch: None, best_score: f64::NEG_INFINITY }
    }

    /// Records `score` for `epoch` and returns whether it is a new best.
    pub fn observe(&mut self, epoch: u32, score: f64) -> bool {
        let improved = self.best_epoch.is_none() || score > self.best_score;
        if improved {
            self.best_epoch = Some(epoch);
            self.best_score = score;
        }
        improved
    }

    pub fn should_stop(&self, epoch: u32) -> bool {
        self.best_epoch.is_some_and(|b| epoch - b > self.patience)
    }
}

struct BatchStats {
    /// Summed BCE and number of episodes it covers.
    bce: f64,
    episodes: usize,
    reward: Option<f64>,
    correct: f64,
}

/// A model together with its optimizer state.
trait Learner {
    fn train_batch(&mut self, batch: &[&LabeledCase], rng: &mut ChaCha8Rng) -> Result<BatchStats>;
    fn set_epoch(&mut self, epoch: u32);
    fn lr(&self) -> f64;
    fn model(&self) -> Model;
}

struct DramLearner<'a> {
    model: NeuroDram,
    opt: Optimizers,
    baseline: RewardBaseline,
    cfg: &'a TrainConfig,
}

impl Learner for DramLearner<'_> {
    fn train_batch(&mut self, batch: &[&LabeledCase], rng: &mut ChaCha8Rng) -> Result<BatchStats> {
        let r = hybrid_train_step(&mut self.model, &mut self.opt, &mut self.baseline, batch, self.cfg, rng)?;
        Ok(BatchStats {
            bce: r.bce,
            episodes: r.episodes,
            reward: Some(r.mean_reward * r.episodes as f64),
            correct: r.accuracy * r.episodes as f64,
        })
    }

    fn set_epoch(&mut self, epoch: u32) {
        self.opt.set_epoch(epoch);
    }

    fn lr(&self) -> f64 {
        self.opt.supervised.current_lr()
    }

    fn model(&self) -> Model {
        Model::NeuroDram(self.model.clone())
    }
}

struct CnnLearner {
    model: BaselineCnn,
    opt: AdamState,
}

impl Learner for CnnLearner {
    fn train_batch(&mut self, batch: &[&LabeledCase], rng: &mut ChaCha8Rng) -> Result<BatchStats> {
        let mut f = self.model.forward(batch, true, rng)?;
        let labels: Vec<f64> = batch.iter().map(|c| f64::from(c.label)).collect();
        let loss = f.graph.bce_with_logits(f.logits, &labels)?;
        let grads = f.graph.backward(loss)?;
        let correct =
            f.graph.value(f.logits).data().iter().zip(batch).filter(|(&z, c)| u8::from(z >= 0.0) == c.label).count();
        self.opt.step(&mut self.model.params, &grads)?;
        self.model.bn_stats = f.bn_stats;
        Ok(BatchStats { bce: f.graph.value(loss).item(), episodes: batch.len(), reward: None, correct: correct as f64 })
    }

    fn set_epoch(&mut self, epoch: u32) {
        self.opt.set_epoch(epoch);
    }

    fn lr(&self) -> f64 {
        self.opt.current_lr()
    }

    fn model(&self) -> Model {
        Model::Baseline(self.model.clone())
    }
}

/// Deterministic-mode evaluation. Returns the report and per-case
/// probabilities.
pub fn evaluate(model: &Model, cases: &[LabeledCase], eval_batch: usize) -> Result<(MetricsReport, Vec<f64>)> {
    if cases.is_empty() {
        return Err(Error::invalid("evaluate", "empty split"));
    }
    let labels: Vec<u8> = cases.iter().map(|c| c.label).collect();
    let probs = match model {
        Model::NeuroDram(m) => {
            let eps = m.evaluate_episodes(cases, m.eval_mode(), 0, eval_batch)?;
            eps.iter().map(|e| e.prediction).collect()
        }
        Model::Baseline(m) => m.predict(cases, eval_batch)?,
    };
    let mut report = MetricsReport::from_predictions(&probs, &labels)?;
    if matches!(model, Model::NeuroDram(_)) {
        report.mean_reward = Some(report.accuracy);
    }
    Ok((report, probs))
}

pub fn check_disjoint_subjects(a: &[LabeledCase], b: &[LabeledCase]) -> Result<()> {
    let left: BTreeSet<&str> = a.iter().map(|c| c.subject_id()).collect();
    let shared: Vec<&str> = b.iter().map(|c| c.subject_id()).filter(|s| left.contains(s)).collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("subjects appear in both splits: {shared:?}")))
    }
}

/// Trains with early stopping on validation balanced accuracy. When
/// `log_path` is given, one JSON line per epoch is appended to it.
pub fn fit(
    train: &[LabeledCase],
    val: &[LabeledCase],
    model: Model,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<FitResult> {
    cfg.validate()?;
    check_disjoint_subjects(train, val)?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::invalid("fit", "need at least 2 training cases and 1 validation case"));
    }
    match model {
        Model::NeuroDram(m) => {
            let learner =
                DramLearner { model: m, opt: Optimizers::new(cfg), baseline: RewardBaseline::new(cfg.baseline), cfg };
            run(learner, train, val, cfg, log_path)
        }
        Model::Baseline(m) => {
            let learner = CnnLearner { model: m, opt: AdamState::new(cfg.baseline_cnn, Group::Supervised) };
            run(learner, train, val, cfg, log_path)
        }
    }
}

fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let n = out.len();
        let start = (n - 2) * size;
        out.truncate(n - 2);
        out.push(&order[start..]);
    }
    out
}

fn run(
    mut learner: impl Learner,
    train: &[LabeledCase],
    val: &[LabeledCase],
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<FitResult> {
    let mut log_file: Option<File> = match log_path {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(u32, MetricsReport, Model)> = None;
    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut log = Vec::new();
    let mut spent = 0.0;
    let mut stop_reason = StopReason::EpochLimit;

    for epoch in 1..=cfg.epochs {
        learner.set_epoch(epoch - 1);
        let lr = learner.lr();
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut bce, mut episodes, mut reward, mut correct) = (0.0, 0, 0.0, 0.0);
        let mut has_reward = false;
        for idx in batches(&order, cfg.batch_size) {
            let batch: Vec<&LabeledCase> = idx.iter().map(|&i| &train[i]).collect();
            let s = learner.train_batch(&batch, &mut rng)?;
            bce += s.bce;
            episodes += s.episodes;
            correct += s.correct;
            if let Some(r) = s.reward {
                reward += r;
                has_reward = true;
            }
        }
        let train_seconds = started.elapsed().as_secs_f64();
        spent += train_seconds;

        let started = Instant::now();
        let current = learner.model();
        let (val_metrics, _) = evaluate(&current, val, cfg.eval_batch)?;
        let eval_seconds = started.elapsed().as_secs_f64();

        let improved = stopping.observe(epoch, val_metrics.score());
        if improved {
            best = Some((epoch, val_metrics.clone(), current));
        }
        let n = episodes.max(1) as f64;
        let record = EpochRecord {
            epoch,
            bce: bce / n,
            mean_reward: has_reward.then_some(reward / n),
            train_accuracy: correct / n,
            lr,
            val_metrics,
            improved,
            timing: Timing { train_seconds, eval_seconds },
        };
        if let (Some(f), Some(p)) = (log_file.as_mut(), log_path) {
            let line = serde_json::to_string(&record).map_err(|e| Error::json(p, e))?;
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        log.push(record);

        if stopping.should_stop(epoch) {
            stop_reason = StopReason::Patience;
            break;
        }
        if cfg.max_wall_seconds.is_some_and(|budget| spent >= budget) && epoch < cfg.epochs {
            stop_reason = StopReason::WallBudget;
            break;
        }
    }
    let (best_epoch, best_val, best) = best.expect("at least one epoch ran");
    Ok(FitResult { best, best_epoch, best_val, log, stop_reason })
}
