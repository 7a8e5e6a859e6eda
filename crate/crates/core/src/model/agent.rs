use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::trunk::{init_linear, init_trunk, linear, trunk_forward};
use crate::autodiff::{lstm_cell, sigmoid, BnMode, BnStats, Graph, Group, LstmWeights, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::volume::{extract_glimpse, ContextRecord, GlimpseRecord, LabeledCase, Standardizer};

pub const GLIMPSE_PREFIX: &str = "glimpse";

/// How a rollout picks locations and normalizes activations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Sampled locations, batch statistics (updated).
    Train,
    /// `l = mu`, running statistics.
    Eval,
    /// Sampled locations, running statistics.
    EvalSampled,
}

impl RolloutMode {
    pub fn samples(self) -> bool {
        !matches!(self, RolloutMode::Eval)
    }

    pub fn bn_mode(self) -> BnMode {
        match self {
            RolloutMode::Train => BnMode::Train,
            _ => BnMode::Infer,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationDecision {
    pub mu: [f64; 3],
    /// Raw sample; extraction clamps it to `[-1, 1]`.
    pub l: [f64; 3],
    /// Log-density of `l` under `N(mu, sigma^2 I)`; 0 in deterministic mode.
    pub log_prob: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub case_id: String,
    pub label: u8,
    pub decisions: Vec<LocationDecision>,
    pub glimpses: Vec<GlimpseRecord>,
    pub logit: f64,
    pub prediction: f64,
    /// Normalized reward: 1 when the thresholded prediction is correct.
    pub reward: f64,
}

impl Episode {
    pub fn predicted_class(&self) -> u8 {
        u8::from(self.prediction >= 0.5)
    }
}

/// Recurrent state handles on a graph; each tensor is `[B, hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct AgentState {
    pub r1: Var,
    pub c1: Var,
    pub r2: Var,
    pub c2: Var,
    pub t: usize,
}

/// Output of the location network for a batch.
#[derive(Clone, Debug)]
pub struct BatchDecision {
    /// `[B, 3]`, tanh-squashed.
    pub mu: Var,
    pub decisions: Vec<LocationDecision>,
    /// `[B]` log-densities, absent in deterministic mode.
    pub log_prob: Option<Var>,
}

/// A batched rollout with its live graph, ready for backward passes.
pub struct Rollout {
    pub graph: Graph,
    /// `[B]` classifier logits.
    pub logits: Var,
    /// Per step, `[B]` log-densities of the sampled locations.
    pub log_probs: Vec<Var>,
    pub state: AgentState,
    pub episodes: Vec<Episode>,
    /// Batch-norm running statistics after this rollout.
    pub bn_stats: Vec<BnStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuroDram {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub bn_stats: Vec<BnStats>,
    /// Context standardization fitted on the training bank.
    pub standardizer: Standardizer,
}

impl NeuroDram {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (h, sup, rl) = (config.hidden, Group::Supervised, Group::Reinforcement);
        let bn_stats = init_trunk(&mut params, GLIMPSE_PREFIX, &config.trunk, sup, &mut rng)?;
        let flat = config.trunk.output_len(config.glimpse_side)?;
        init_linear(&mut params, "glimpse.what", h, flat, sup, &mut rng)?;
        init_linear(&mut params, "glimpse.where", h, 3, sup, &mut rng)?;
        init_lstm(&mut params, "core.lstm1", h, h, sup, &mut rng)?;
        init_lstm(&mut params, "core.lstm2", h, h, rl, &mut rng)?;
        init_linear(&mut params, "context", h, config.context_dim, rl, &mut rng)?;
        init_linear(&mut params, "location", 3, h, rl, &mut rng)?;
        init_linear(&mut params, "classifier", 1, h, sup, &mut rng)?;
        Ok(Self { config, params, bn_stats, standardizer: Standardizer::default() })
    }

    pub fn encode_context(&self, ctx: &ContextRecord) -> Vec<f64> {
        self.standardizer.encode(ctx)
    }

    /// `r_0^2 = tanh(W c + b)` for encoded contexts `[B, context_dim]`.
    pub fn context_network(&self, g: &mut Graph, encoded: Var) -> Result<Var> {
        let width = *g.shape(encoded).last().unwrap();
        if width != self.config.context_dim {
            return Err(Error::shape(
                "context_network",
                format!("encoded context has {width} values, model expects {}", self.config.context_dim),
            ));
        }
        let z = linear(g, &self.params, "context", encoded)?;
        Ok(g.tanh(z))
    }

    /// Zero LSTM1 state and cells; `r2` from the context network.
    pub fn initial_state(&self, g: &mut Graph, encoded: Var) -> Result<AgentState> {
        let batch = g.shape(encoded)[0];
        let r2 = self.context_network(g, encoded)?;
        let zeros = Tensor::zeros(&[batch, self.config.hidden]);
        let r1 = g.constant(zeros.clone());
        let c1 = g.constant(zeros.clone());
        let c2 = g.constant(zeros);
        Ok(AgentState { r1, c1, r2, c2, t: 0 })
    }

    /// `g_t = g_x ⊙ g_l`: the trunk over glimpses `[B,1,g,g,g]` projected to
    /// `hidden`, times a linear map of the locations `[B,3]`.
    pub fn glimpse_network(
        &self,
        g: &mut Graph,
        glimpses: Var,
        locations: Var,
        stats: &mut [BnStats],
        mode: BnMode,
    ) -> Result<Var> {
        let side = self.config.glimpse_side;
        let shape = g.shape(glimpses);
        if shape.len() != 5 || shape[1..] != [1, side, side, side] {
            return Err(Error::shape("glimpse_network", format!("expected [B,1,{side},{side},{side}], got {shape:?}")));
        }
        let feat = trunk_forward(g, &self.params, GLIMPSE_PREFIX, &self.config.trunk, glimpses, stats, mode)?;
        let what = linear(g, &self.params, "glimpse.what", feat)?;
        let where_ = linear(g, &self.params, "glimpse.where", locations)?;
        g.mul(what, where_)
    }

    /// Both LSTM cells; LSTM2 sees LSTM1's new output through a stop marker.
    pub fn recurrent_step(&self, g: &mut Graph, gt: Var, s: AgentState) -> Result<AgentState> {
        let w1 = lstm_weights(g, &self.params, "core.lstm1")?;
        let w2 = lstm_weights(g, &self.params, "core.lstm2")?;
        let (r1, c1) = lstm_cell(g, gt, s.r1, s.c1, &w1)?;
        let held = g.stop_gradient(r1);
        let (r2, c2) = lstm_cell(g, held, s.r2, s.c2, &w2)?;
        Ok(AgentState { r1, c1, r2, c2, t: s.t + 1 })
    }

    /// `mu = tanh(W r2 + b)`; samples `l ~ N(mu, sigma^2 I)` when `sample`.
    pub fn location_network(&self, g: &mut Graph, r2: Var, sample: bool, rng: &mut impl Rng) -> Result<BatchDecision> {
        let sigma = self.config.sigma;
        if sample && sigma <= 0.0 {
            return Err(Error::invalid("location_network", "sigma must be positive to sample"));
        }
        let z = linear(g, &self.params, "location", r2)?;
        let mu = g.tanh(z);
        let m = g.value(mu).data().to_vec();
        let batch = m.len() / 3;
        if !sample {
            let decisions = (0..batch)
                .map(|b| {
                    let mu = [m[3 * b], m[3 * b + 1], m[3 * b + 2]];
                    LocationDecision { mu, l: mu, log_prob: 0.0, sigma }
                })
                .collect();
            return Ok(BatchDecision { mu, decisions, log_prob: None });
        }
        let raw: Vec<f64> = m
            .iter()
            .map(|&mu| {
                let e: f64 = StandardNormal.sample(rng);
                mu + sigma * e
            })
            .collect();
        let sample_t = Tensor::new(vec![batch, 3], raw.clone())?;
        let lp = g.gaussian_log_prob(mu, &sample_t, sigma)?;
        let lpv = g.value(lp).data();
        let decisions = (0..batch)
            .map(|b| LocationDecision {
                mu: [m[3 * b], m[3 * b + 1], m[3 * b + 2]],
                l: [raw[3 * b], raw[3 * b + 1], raw[3 * b + 2]],
                log_prob: lpv[b],
                sigma,
            })
            .collect();
        Ok(BatchDecision { mu, decisions, log_prob: Some(lp) })
    }

    /// Classifier logits `[B]` from the final LSTM1 output.
    pub fn classification_network(&self, g: &mut Graph, s: AgentState) -> Result<Var> {
        if s.t != self.config.steps {
            return Err(Error::invalid(
                "classification_network",
                format!("episode at step {} of {}", s.t, self.config.steps),
            ));
        }
        let z = linear(g, &self.params, "classifier", s.r1)?;
        let batch = g.shape(z)[0];
        g.reshape(z, &[batch])
    }

    pub fn rollout(&self, cases: &[&LabeledCase], mode: RolloutMode, rng: &mut impl Rng) -> Result<Rollout> {
        self.rollout_on(Graph::new(), cases, mode, rng)
    }

    /// Runs `cases` in lockstep for `steps` glimpses on the given graph.
    pub fn rollout_on(
        &self,
        mut g: Graph,
        cases: &[&LabeledCase],
        mode: RolloutMode,
        rng: &mut impl Rng,
    ) -> Result<Rollout> {
        if cases.is_empty() {
            return Err(Error::invalid("run_episode", "no cases"));
        }
        let batch = cases.len();
        let side = self.config.glimpse_side;
        let mut stats = self.bn_stats.clone();
        let encoded: Vec<f64> = cases.iter().flat_map(|c| self.encode_context(&c.context)).collect();
        let encoded = g.constant(Tensor::new(vec![batch, self.config.context_dim], encoded)?);
        let mut state = self.initial_state(&mut g, encoded)?;

        let mut decisions = vec![Vec::with_capacity(self.config.steps); batch];
        let mut glimpses = vec![Vec::with_capacity(self.config.steps); batch];
        let mut log_probs = Vec::new();
        for t in 0..self.config.steps {
            let d = self.location_network(&mut g, state.r2, mode.samples(), rng)?;
            log_probs.extend(d.log_prob);
            let mut pixels = Vec::with_capacity(batch * side * side * side);
            let mut locs = Vec::with_capacity(batch * 3);
            for (b, (case, dec)) in cases.iter().zip(d.decisions).enumerate() {
                let rec = extract_glimpse(&case.volume, dec.l, side, t)?;
                pixels.extend_from_slice(&rec.voxels);
                locs.extend_from_slice(&rec.location);
                decisions[b].push(dec);
                glimpses[b].push(rec);
            }
            let x = g.constant(Tensor::new(vec![batch, 1, side, side, side], pixels)?);
            let l = g.constant(Tensor::new(vec![batch, 3], locs)?);
            let gt = self.glimpse_network(&mut g, x, l, &mut stats, mode.bn_mode())?;
            state = self.recurrent_step(&mut g, gt, state)?;
        }
        let logits = self.classification_network(&mut g, state)?;

        let z = g.value(logits).data().to_vec();
        let episodes = cases
            .iter()
            .zip(decisions.into_iter().zip(glimpses))
            .zip(z)
            .map(|((case, (decisions, glimpses)), logit)| {
                let prediction = sigmoid(logit);
                let correct = u8::from(prediction >= 0.5) == case.label;
                Episode {
                    case_id: case.case_id.clone(),
                    label: case.label,
                    decisions,
                    glimpses,
                    logit,
                    prediction,
                    reward: f64::from(u8::from(correct)),
                }
            })
            .collect();
        Ok(Rollout { graph: g, logits, log_probs, state, episodes, bn_stats: stats })
    }

    /// Single-case episode. Batch statistics need two or more cases, so
    /// `Train` mode is rejected here; use [`NeuroDram::rollout`].
    pub fn run_episode(&self, case: &LabeledCase, mode: RolloutMode, rng: &mut impl Rng) -> Result<Episode> {
        if mode == RolloutMode::Train {
            return Err(Error::invalid("run_episode", "train mode needs a batch of at least 2 cases"));
        }
        Ok(self.rollout(&[case], mode, rng)?.episodes.remove(0))
    }

    /// Evaluation episodes in chunks of `chunk` cases.
    pub fn evaluate_episodes(
        &self,
        cases: &[LabeledCase],
        mode: RolloutMode,
        seed: u64,
        chunk: usize,
    ) -> Result<Vec<Episode>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(cases.len());
        for part in cases.chunks(chunk.max(1)) {
            let refs: Vec<&LabeledCase> = part.iter().collect();
            out.extend(self.rollout(&refs, mode, &mut rng)?.episodes);
        }
        Ok(out)
    }

    pub fn eval_mode(&self) -> RolloutMode {
        if self.config.deterministic_eval {
            RolloutMode::Eval
        } else {
            RolloutMode::EvalSampled
        }
    }
}

fn init_lstm(
    store: &mut ParamStore,
    prefix: &str,
    n_in: usize,
    h: usize,
    group: Group,
    rng: &mut impl Rng,
) -> Result<()> {
    let bound = 1.0 / (h as f64).sqrt();
    let mut u = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
    store.insert(format!("{prefix}.w_ih"), Tensor::new(vec![4 * h, n_in], u(4 * h * n_in))?, group)?;
    store.insert(format!("{prefix}.w_hh"), Tensor::new(vec![4 * h, h], u(4 * h * h))?, group)?;
    store.insert(format!("{prefix}.bias"), Tensor::new(vec![4 * h], u(4 * h))?, group)?;
    Ok(())
}

fn lstm_weights(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<LstmWeights> {
    Ok(LstmWeights {
        w_ih: g.param(store, &format!("{prefix}.w_ih"))?,
        w_hh: g.param(store, &format!("{prefix}.w_hh"))?,
        bias: g.param(store, &format!("{prefix}.bias"))?,
    })
}

/// Groups of parameter-name prefixes, for isolation reports.
pub fn supervised_prefixes() -> [&'static str; 3] {
    ["glimpse.", "core.lstm1.", "classifier."]
}

pub fn reinforcement_prefixes() -> [&'static str; 3] {
    ["location.", "core.lstm2.", "context."]
}
