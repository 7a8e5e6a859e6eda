//! End-to-end acceptance run. Prints one line per criterion and a summary.
//! With `ACCEPTANCE_STRICT` set, any failing criterion makes the exit status
//! nonzero. Takes about half an hour on one core.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use neurodram::harness::verify::{gradcheck_suite, isolation_suite, policy_suite, GRAD_POINTS, GRAD_TOLERANCE};
use neurodram::harness::{
    cmd_eval, cmd_generate, cmd_trace, cmd_train, load_checkpoint, EvalTarget, ExperimentConfig, TrainSummary,
    TrajectoryTrace, CHECKPOINT_FILE, POLICY_SAMPLES,
};
use neurodram::model::{Model, ModelKind, NeuroDram};
use neurodram::train::MetricsReport;
use neurodram::volume::{Manifest, Split, MANIFEST_FILE};

const WALL_LIMIT: f64 = 15.0 * 60.0;
const EPOCH_LIMIT: u32 = 30;
const GRADCHECK_SECONDS: f64 = 60.0;

struct Line {
    id: u32,
    passed: bool,
}

fn report(lines: &mut Vec<Line>, id: u32, passed: bool, detail: String) {
    println!("criterion {id} [PRIMARY] {}: {detail}", if passed { "PASS" } else { "FAIL" });
    lines.push(Line { id, passed });
}

fn ba(m: &MetricsReport) -> f64 {
    m.balanced_accuracy.unwrap_or(f64::NAN)
}

fn train(
    cfg: &ExperimentConfig,
    data: &Path,
    out: &Path,
    kind: ModelKind,
    blank: bool,
) -> (TrainSummary, f64, MetricsReport) {
    let t = Instant::now();
    let summary = cmd_train(cfg, data, out, kind, blank).expect("train");
    let wall = t.elapsed().as_secs_f64();
    let eval = cmd_eval(cfg, &out.join(CHECKPOINT_FILE), data, EvalTarget::Split(Split::Test), blank).expect("eval");
    (summary, wall, eval.metrics)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    let cfg = ExperimentConfig::default();
    let seed = cfg.seed;

    let g = gradcheck_suite(seed).expect("gradcheck");
    let few = g.ops.iter().filter(|o| (o.points as u64) < GRAD_POINTS).count();
    let worst = g.ops.iter().map(|o| o.worst_rel_error).fold(0.0, f64::max);
    report(
        &mut lines,
        1,
        g.passed && few == 0 && g.seconds < GRADCHECK_SECONDS,
        format!("{} ops, worst rel error {worst:.2e} (tol {GRAD_TOLERANCE:e}), {:.1}s", g.ops.len(), g.seconds),
    );

    let p = policy_suite(POLICY_SAMPLES, seed).expect("policy");
    report(
        &mut lines,
        2,
        p.passed,
        format!("estimator vs finite difference {:.2} SE, score mean {:.2} SE", p.report.estimator_z, p.report.score_z),
    );

    let iso = isolation_suite(seed, true).expect("isolation");
    let control = isolation_suite(seed, false).expect("isolation control");
    report(
        &mut lines,
        3,
        iso.passed && !control.passed,
        format!(
            "{} BCE leaks, {} REINFORCE leaks; with stops removed {} leaks",
            iso.bce_leaks.len(),
            iso.reinforce_leaks.len(),
            control.bce_leaks.len() + control.reinforce_leaks.len()
        ),
    );

    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("data");
    let manifest = cmd_generate(&cfg, &data).expect("generate");
    let count = |s| manifest.cases.iter().filter(|c| c.split == Some(s)).count();
    println!(
        "dataset: {} train / {} val / {} test, {}^3 volumes",
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        cfg.data.synthetic.volume_side
    );

    let dram_dir = dir.path().join("dram");
    let (dram, dram_wall, dram_test) = train(&cfg, &data, &dram_dir, ModelKind::NeuroDram, false);
    let blank_dir = dir.path().join("blank");
    let (_, _, blank_test) = train(&cfg, &data, &blank_dir, ModelKind::NeuroDram, true);
    let blank_ba = ba(&blank_test);
    report(
        &mut lines,
        4,
        ba(&dram_test) >= 0.90
            && dram.best_epoch <= EPOCH_LIMIT
            && cfg.train.epochs <= EPOCH_LIMIT
            && dram_wall < WALL_LIMIT
            && (0.35..=0.65).contains(&blank_ba),
        format!(
            "test BA {:.3} at epoch {} after {} epochs in {:.0}s; blank-volume test BA {blank_ba:.3}",
            ba(&dram_test),
            dram.best_epoch,
            dram.epochs_run,
            dram_wall
        ),
    );

    let trained = cmd_trace(&cfg, &dram_dir.join(CHECKPOINT_FILE), &data, &[], Split::Test).expect("trace");
    let ck = load_checkpoint(&cfg, &dram_dir.join(CHECKPOINT_FILE)).expect("checkpoint");
    let Model::NeuroDram(fitted) = ck.model else { unreachable!() };
    let mut untrained = NeuroDram::new(cfg.model.clone(), seed).expect("model");
    untrained.standardizer = fitted.standardizer.clone();
    let m = Manifest::read(data.join(MANIFEST_FILE)).expect("manifest");
    let test = m.load(Some(Split::Test)).expect("test split");
    let eps = untrained.evaluate_episodes(&test, untrained.eval_mode(), seed, cfg.train.eval_batch).expect("rollout");
    let untrained: Vec<TrajectoryTrace> =
        eps.iter().zip(&test).map(|(e, c)| TrajectoryTrace::from_episode(e, c.signal_center)).collect();
    let trained_d: Vec<f64> = trained.iter().filter_map(|t| t.final_distance()).collect();
    let untrained_d: Vec<f64> = untrained.iter().filter_map(|t| t.final_distance()).collect();
    let (td, ud) = (mean(&trained_d), mean(&untrained_d));
    report(
        &mut lines,
        5,
        trained_d.len() == test.len() && untrained_d.len() == test.len() && td < 0.5 * ud,
        format!(
            "mean final distance {td:.2} voxels trained vs {ud:.2} untrained (ratio {:.2}); per step {} vs {}",
            td / ud,
            per_step(&trained),
            per_step(&untrained)
        ),
    );

    // same compute budget: the CNN gets the training seconds the agent used
    let budget = dram.mean_epoch_seconds * dram.epochs_run as f64;
    let mut cnn_cfg = cfg.clone();
    cnn_cfg.train.max_wall_seconds = Some(budget);
    let cnn_dir = dir.path().join("cnn");
    let (cnn, _, cnn_test) = train(&cnn_cfg, &data, &cnn_dir, ModelKind::BaselineCnn, false);
    report(
        &mut lines,
        6,
        ba(&dram_test) >= ba(&cnn_test) && dram.mean_epoch_seconds < cnn.mean_epoch_seconds,
        format!(
            "test BA {:.3} vs CNN {:.3} ({} epochs in a {budget:.0}s budget); {:.1}s vs {:.1}s per epoch",
            ba(&dram_test),
            ba(&cnn_test),
            cnn.epochs_run,
            dram.mean_epoch_seconds,
            cnn.mean_epoch_seconds
        ),
    );

    let agree = common::imputation_agreement(seed, 100);
    report(&mut lines, 7, agree == 100, format!("{agree}/100 partial records match brute force"));

    let mut short = cfg.clone();
    short.train.epochs = 2;
    let run = |name: &str| {
        let out = dir.path().join(name);
        let (s, _, test) = train(&short, &data, &out, ModelKind::NeuroDram, false);
        (s.val, test, std::fs::read(out.join(CHECKPOINT_FILE)).expect("checkpoint bytes"))
    };
    let (a, b) = (run("det-a"), run("det-b"));
    report(
        &mut lines,
        8,
        a == b,
        format!(
            "two {}-epoch runs: metrics {}, checkpoints {}",
            short.train.epochs,
            same(a.1 == b.1),
            same(a.2 == b.2)
        ),
    );

    let failed: Vec<String> = lines.iter().filter(|l| !l.passed).map(|l| l.id.to_string()).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", lines.len());
        return ExitCode::SUCCESS;
    }
    println!(
        "acceptance: {}/{} criteria pass; failing: {}",
        lines.len() - failed.len(),
        lines.len(),
        failed.join(", ")
    );
    if std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

/// Mean distance to the signal at each step, rounded to voxels.
fn per_step(traces: &[TrajectoryTrace]) -> String {
    let steps = traces.first().map_or(0, |t| t.steps.len());
    let d: Vec<String> = (0..steps)
        .map(|i| {
            let ds: Vec<f64> = traces
                .iter()
                .filter_map(|t| {
                    let s = t.signal_center?;
                    let c = t.steps[i].voxel_center;
                    Some((0..3).map(|k| (c[k] as f64 - s[k]).powi(2)).sum::<f64>().sqrt())
                })
                .collect();
            format!("{:.0}", mean(&ds))
        })
        .collect();
    format!("[{}]", d.join(", "))
}

fn same(b: bool) -> &'static str {
    if b {
        "identical"
    } else {
        "differ"
    }
}
