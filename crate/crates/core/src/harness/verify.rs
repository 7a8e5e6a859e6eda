//! Built-in verification suites: finite-difference gradient checks on every
//! op, Monte-Carlo checks of the REINFORCE estimator, and bit-exact gradient
//! isolation between the two parameter groups.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    grad_check, lstm_cell, BnMode, BnStats, GradCheckOptions, Graph, Group, LstmWeights, ParamStore, Tensor, Var,
};
use crate::error::Result;
use crate::model::{ModelConfig, NeuroDram};
use crate::train::policy_check::{run_policy_checks, HalfSpace, PolicyCheckReport};
use crate::train::{hybrid_pass, Optimizers, TrainConfig};
use crate::volume::{generate_case, Standardizer, SyntheticConfig};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_POINTS: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Policy,
    Isolation,
}

#[derive(Clone, Debug, Serialize)]
pub struct OpCheck {
    pub op: String,
    pub points: usize,
    pub coordinates: usize,
    pub worst_rel_error: f64,
    /// `param[index]` of the worst coordinate.
    pub worst_at: Option<String>,
    /// Coordinates behind a declared stop whose numeric derivative is nonzero.
    pub intentional_stops: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckSuite {
    pub ops: Vec<OpCheck>,
    pub seconds: f64,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), uniform(rng, shape.iter().product(), -1.0, 1.0)).unwrap()
}

/// Values bounded away from zero, so ReLU is never probed at its kink.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Distinct values with gaps far larger than the finite-difference step.
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 + rng.random_range(0.0..0.002)).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    v
}

type Builder = Box<dyn Fn(&mut ChaCha8Rng) -> (ParamStore, Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)>;

fn store_of(entries: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in entries {
        s.insert(name, t, Group::Supervised).unwrap();
    }
    s
}

/// Reduces any output to a scalar with fixed random weights, so every
/// output coordinate carries a distinct upstream gradient.
fn project(g: &mut Graph, out: Var, weights: &[f64]) -> Result<Var> {
    g.dot_const(out, &weights[..g.value(out).numel()])
}

fn elementwise(name: &'static str, f: fn(&mut Graph, Var) -> Var, kink_free: bool) -> (String, Builder) {
    (
        name.to_string(),
        Box::new(move |rng| {
            let x = if kink_free { Tensor::from_vec(away_from_zero(rng, 6)) } else { tensor(rng, &[6]) };
            let w = uniform(rng, 6, -1.0, 1.0);
            let store = store_of(vec![("x", x)]);
            let func = move |g: &mut Graph, s: &ParamStore| {
                let x = g.param(s, "x")?;
                let y = f(g, x);
                project(g, y, &w)
            };
            (store, Box::new(func) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    )
}

fn cases() -> Vec<(String, Builder)> {
    let mut v: Vec<(String, Builder)> = Vec::new();
    for (stride, pad) in [(1usize, 0usize), (1, 1), (2, 1)] {
        v.push((
            format!("conv3d(stride={stride},pad={pad})"),
            Box::new(move |rng| {
                let store = store_of(vec![
                    ("x", tensor(rng, &[2, 2, 4, 4, 4])),
                    ("k", tensor(rng, &[3, 2, 3, 3, 3])),
                    ("b", tensor(rng, &[3])),
                ]);
                let w = uniform(rng, 2 * 3 * 216, -1.0, 1.0);
                let f = move |g: &mut Graph, s: &ParamStore| {
                    let (x, k, b) = (g.param(s, "x")?, g.param(s, "k")?, g.param(s, "b")?);
                    let y = g.conv3d(x, k, b, stride, pad)?;
                    project(g, y, &w)
                };
                (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
            }),
        ));
    }
    v.push((
        "maxpool3d".into(),
        Box::new(|rng| {
            let store = store_of(vec![("x", Tensor::new(vec![2, 4, 4, 4], distinct(rng, 128)).unwrap())]);
            let w = uniform(rng, 16, -1.0, 1.0);
            let f = move |g: &mut Graph, s: &ParamStore| {
                let x = g.param(s, "x")?;
                let y = g.maxpool3d(x, 2)?;
                project(g, y, &w)
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    ));
    for mode in [BnMode::Train, BnMode::Infer] {
        v.push((
            format!("batchnorm3d({mode:?})").to_lowercase(),
            Box::new(move |rng| {
                let store = store_of(vec![
                    ("x", tensor(rng, &[3, 2, 2, 2, 2])),
                    ("gamma", tensor(rng, &[2])),
                    ("beta", tensor(rng, &[2])),
                ]);
                let w = uniform(rng, 48, -1.0, 1.0);
                let mut stats = BnStats::new(2);
                stats.mean = uniform(rng, 2, -0.5, 0.5);
                stats.var = uniform(rng, 2, 0.5, 2.0);
                let f = move |g: &mut Graph, s: &ParamStore| {
                    let (x, ga, be) = (g.param(s, "x")?, g.param(s, "gamma")?, g.param(s, "beta")?);
                    let mut st = stats.clone();
                    let y = g.batchnorm3d(x, ga, be, &mut st, mode)?;
                    project(g, y, &w)
                };
                (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
            }),
        ));
    }
    v.push((
        "linear".into(),
        Box::new(|rng| {
            let store =
                store_of(vec![("x", tensor(rng, &[3, 4])), ("w", tensor(rng, &[5, 4])), ("b", tensor(rng, &[5]))]);
            let w = uniform(rng, 15, -1.0, 1.0);
            let f = move |g: &mut Graph, s: &ParamStore| {
                let (x, wt, b) = (g.param(s, "x")?, g.param(s, "w")?, g.param(s, "b")?);
                let y = g.linear(x, wt, Some(b))?;
                project(g, y, &w)
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    ));
    for (name, binary) in [("add", true), ("elementwise_mul", false)] {
        v.push((
            name.into(),
            Box::new(move |rng| {
                let store = store_of(vec![("a", tensor(rng, &[6])), ("b", tensor(rng, &[6]))]);
                let w = uniform(rng, 6, -1.0, 1.0);
                let f = move |g: &mut Graph, s: &ParamStore| {
                    let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                    let y = if binary { g.add(a, b)? } else { g.mul(a, b)? };
                    project(g, y, &w)
                };
                (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
            }),
        ));
    }
    v.push((
        "mul_const".into(),
        Box::new(|rng| {
            let store = store_of(vec![("x", tensor(rng, &[6]))]);
            let c = tensor(rng, &[6]);
            let w = uniform(rng, 6, -1.0, 1.0);
            let f = move |g: &mut Graph, s: &ParamStore| {
                let x = g.param(s, "x")?;
                let y = g.mul_const(x, &c)?;
                project(g, y, &w)
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    ));
    v.push(elementwise("scale", |g, x| g.scale(x, -1.7), false));
    v.push(elementwise("tanh", |g, x| g.tanh(x), false));
    v.push(elementwise("sigmoid", |g, x| g.sigmoid(x), false));
    v.push(elementwise("relu", |g, x| g.relu(x), true));
    v.push(elementwise("square", |g, x| g.square(x), false));
    v.push(elementwise("sum", |g, x| g.sum(x), false));
    v.push((
        "narrow+reshape".into(),
        Box::new(|rng| {
            let store = store_of(vec![("x", tensor(rng, &[3, 5]))]);
            let w = uniform(rng, 6, -1.0, 1.0);
            let f = move |g: &mut Graph, s: &ParamStore| {
                let x = g.param(s, "x")?;
                let y = g.narrow(x, 1, 2)?;
                let y = g.reshape(y, &[6])?;
                project(g, y, &w)
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    ));
    v.push((
        "bce_loss".into(),
        Box::new(|rng| {
            let z = Tensor::from_vec(uniform(rng, 5, -3.0, 3.0));
            let labels: Vec<f64> = (0..5).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect();
            let store = store_of(vec![("z", z)]);
            let f = move |g: &mut Graph, s: &ParamStore| {
                let z = g.param(s, "z")?;
                g.bce_with_logits(z, &labels)
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    ));
    v.push((
        "gaussian_log_prob".into(),
        Box::new(|rng| {
            let store = store_of(vec![("mu", tensor(rng, &[4, 3]))]);
            let sample = tensor(rng, &[4, 3]);
            let w = uniform(rng, 4, -1.0, 1.0);
            let f = move |g: &mut Graph, s: &ParamStore| {
                let mu = g.param(s, "mu")?;
                let y = g.gaussian_log_prob(mu, &sample, 0.3)?;
                project(g, y, &w)
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    ));
    v.push((
        "lstm_cell".into(),
        Box::new(|rng| {
            let store = store_of(vec![
                ("x", tensor(rng, &[2, 3])),
                ("h", tensor(rng, &[2, 4])),
                ("c", tensor(rng, &[2, 4])),
                ("w_ih", tensor(rng, &[16, 3])),
                ("w_hh", tensor(rng, &[16, 4])),
                ("bias", tensor(rng, &[16])),
            ]);
            let wh = uniform(rng, 8, -1.0, 1.0);
            let wc = uniform(rng, 8, -1.0, 1.0);
            let f = move |g: &mut Graph, s: &ParamStore| {
                let w = LstmWeights { w_ih: g.param(s, "w_ih")?, w_hh: g.param(s, "w_hh")?, bias: g.param(s, "bias")? };
                let (x, h, c) = (g.param(s, "x")?, g.param(s, "h")?, g.param(s, "c")?);
                let (h2, c2) = lstm_cell(g, x, h, c, &w)?;
                let a = project(g, h2, &wh)?;
                let b = project(g, c2, &wc)?;
                g.add(a, b)
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    ));
    v.push((
        "conv3d>maxpool3d>linear>bce".into(),
        Box::new(|rng| {
            let store = store_of(vec![
                ("x", tensor(rng, &[1, 4, 4, 4])),
                ("k", tensor(rng, &[2, 1, 3, 3, 3])),
                ("kb", tensor(rng, &[2])),
                ("w", tensor(rng, &[1, 16])),
                ("b", tensor(rng, &[1])),
            ]);
            let f = move |g: &mut Graph, s: &ParamStore| {
                let (x, k, kb) = (g.param(s, "x")?, g.param(s, "k")?, g.param(s, "kb")?);
                let y = g.conv3d(x, k, kb, 1, 1)?;
                let y = g.maxpool3d(y, 2)?;
                let y = g.reshape(y, &[16])?;
                let (w, b) = (g.param(s, "w")?, g.param(s, "b")?);
                let z = g.linear(y, w, Some(b))?;
                g.bce_with_logits(z, &[1.0])
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    ));
    v.push((
        STOP_CASE.into(),
        Box::new(|rng| {
            let store = store_of(vec![("a", tensor(rng, &[4])), ("b", tensor(rng, &[4]))]);
            let w = uniform(rng, 4, -1.0, 1.0);
            let f = move |g: &mut Graph, s: &ParamStore| {
                let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
                let h = g.tanh(a);
                let h = g.stop_gradient(h);
                let y = g.mul(h, b)?;
                project(g, y, &w)
            };
            (store, Box::new(f) as Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)
        }),
    ));
    v
}

const STOP_CASE: &str = "stop_gradient(declared)";

pub fn gradcheck_suite(seed: u64) -> Result<GradcheckSuite> {
    let started = Instant::now();
    let plain = GradCheckOptions::default();
    let mut stopped = GradCheckOptions::default();
    stopped.declared_stops.insert("a".into());
    let mut ops = Vec::new();
    for (i, (name, build)) in cases().into_iter().enumerate() {
        let mut check = OpCheck {
            op: name,
            points: 0,
            coordinates: 0,
            worst_rel_error: 0.0,
            worst_at: None,
            intentional_stops: 0,
            passed: true,
        };
        for point in 0..GRAD_POINTS {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::volume::derive_seed(seed, (i as u64) << 32 | point));
            let (store, f) = build(&mut rng);
            let opts = if check.op == STOP_CASE { &stopped } else { &plain };
            let report = grad_check(&store, f, opts)?;
            check.intentional_stops += report.intentional_stops.len();
            check.points += 1;
            check.coordinates += report.coordinates;
            if report.max_rel_error >= check.worst_rel_error {
                check.worst_rel_error = report.max_rel_error;
                check.worst_at = report.worst.map(|w| format!("{}[{}]", w.param, w.index));
            }
        }
        check.passed =
            check.worst_rel_error <= GRAD_TOLERANCE && (check.op != STOP_CASE || check.intentional_stops > 0);
        ops.push(check);
    }
    let passed = ops.iter().all(|o| o.passed);
    Ok(GradcheckSuite { ops, seconds: started.elapsed().as_secs_f64(), passed })
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicySuite {
    pub report: PolicyCheckReport,
    pub passed: bool,
}

pub fn policy_suite(samples: usize, seed: u64) -> Result<PolicySuite> {
    let report = run_policy_checks(&HalfSpace::default(), samples, seed)?;
    Ok(PolicySuite { passed: report.passes(), report })
}

#[derive(Clone, Debug, Serialize)]
pub struct IsolationSuite {
    pub stops_enabled: bool,
    /// Reinforcement-group parameters with a nonzero BCE gradient entry.
    pub bce_leaks: Vec<String>,
    /// Supervised-group parameters with a nonzero REINFORCE gradient entry.
    pub reinforce_leaks: Vec<String>,
    pub reachable_from_prediction: BTreeSet<String>,
    pub reachable_from_log_probs: BTreeSet<String>,
    /// Reachable sets equal the supervised and reinforcement groups exactly.
    pub reachable_sets_match: bool,
    pub passed: bool,
}

fn leaks(grads: &crate::autodiff::Gradients, store: &ParamStore, group: Group) -> Vec<String> {
    store
        .names_in(group)
        .into_iter()
        .filter(|n| grads.get(n).is_some_and(|g| g.data().iter().any(|&v| v != 0.0)))
        .collect()
}

/// One hybrid step on a freshly initialized model. `stops_enabled = false`
/// removes the gradient stop between the LSTMs (negative control).
pub fn isolation_suite(seed: u64, stops_enabled: bool) -> Result<IsolationSuite> {
    let syn = SyntheticConfig::default();
    let cases: Vec<_> = (0..4).map(|i| generate_case(&syn, (i % 2) as u8, 1000 + i)).collect();
    let mut model = NeuroDram::new(ModelConfig::default(), seed)?;
    model.standardizer = Standardizer::fit(&cases.iter().map(|c| c.context.clone()).collect::<Vec<_>>());
    let cfg = TrainConfig::default();
    let batch: Vec<_> = cases.iter().collect();
    let graph = if stops_enabled { Graph::new() } else { Graph::with_stops_disabled() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pass = hybrid_pass(&model, graph, &batch, &cfg, 0.5, &mut rng)?;

    let bce_leaks = leaks(&pass.bce_grads, &model.params, Group::Reinforcement);
    let reinforce_leaks = leaks(&pass.reinforce_grads, &model.params, Group::Supervised);

    // reachable sets, on an independent rollout of the same batch
    let graph = if stops_enabled { Graph::new() } else { Graph::with_stops_disabled() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut roll = model.rollout_on(graph, &batch, crate::model::RolloutMode::Train, &mut rng)?;
    let g = &mut roll.graph;
    let pred = g.sum(roll.logits);
    let mut lp = roll.log_probs[0];
    for &v in &roll.log_probs[1..] {
        lp = g.add(lp, v)?;
    }
    let lp = g.sum(lp);
    let reachable_from_prediction = g.reachable_params(pred);
    let reachable_from_log_probs = g.reachable_params(lp);
    let sup: BTreeSet<String> = model.params.names_in(Group::Supervised).into_iter().collect();
    let rl: BTreeSet<String> = model.params.names_in(Group::Reinforcement).into_iter().collect();
    let reachable_sets_match = reachable_from_prediction == sup && reachable_from_log_probs == rl;

    // one full step must go through cleanly
    let mut opt = Optimizers::new(&cfg);
    opt.supervised.step(&mut model.params, &pass.bce_grads)?;
    opt.reinforcement.step(&mut model.params, &pass.reinforce_grads)?;

    let passed = bce_leaks.is_empty() && reinforce_leaks.is_empty() && reachable_sets_match;
    Ok(IsolationSuite {
        stops_enabled,
        bce_leaks,
        reinforce_leaks,
        reachable_from_prediction,
        reachable_from_log_probs,
        reachable_sets_match,
        passed,
    })
}
