use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::trace::TrajectoryTrace;
use super::verify::{
    gradcheck_suite, isolation_suite, policy_suite, GradcheckSuite, IsolationSuite, PolicySuite, Suite,
};
use crate::error::{Error, Result};
use crate::model::{BaselineCnn, Checkpoint, Model, ModelKind, NeuroDram};
use crate::train::{evaluate, fit, MetricsReport, StopReason};
use crate::volume::{
    generate_dataset, impute_context, read_context_bank, split_by_subject, write_atomic, write_dataset, LabeledCase,
    Manifest, Split, Standardizer, CONTEXT_BANK_FILE, MANIFEST_FILE,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.ndck";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "traces.jsonl";
pub const POLICY_SAMPLES: usize = 100_000;

/// `--config` and `--seed` resolved into one validated config.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.apply_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn to_json<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Generates the synthetic dataset into `out`, which must be absent or
/// empty. Everything is first written to a sibling directory and renamed
/// into place, so a failure leaves nothing behind.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    if out.exists() {
        let mut it = fs::read_dir(out).map_err(|e| Error::io(out, e))?;
        if it.next().is_some() {
            return Err(Error::Data(format!("output directory {} is not empty", out.display())));
        }
        fs::remove_dir(out).map_err(|e| Error::io(out, e))?;
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&parent)?;
    let staging =
        tempfile::Builder::new().prefix(".generate-").tempdir_in(&parent).map_err(|e| Error::io(&parent, e))?;

    let d = &cfg.data;
    let cases = generate_dataset(&d.synthetic, d.subjects_per_class, d.scans_per_subject);
    let subjects: Vec<&str> = cases.iter().map(|c| c.subject_id()).collect();
    let subject_splits = split_by_subject(&subjects, d.split_ratios, cfg.seed)?;
    write_dataset(staging.path(), &cases, &subject_splits)?;
    let cfg_path = staging.path().join("config.json");
    write_atomic(&cfg_path, to_json(cfg, &cfg_path)?.as_bytes())?;

    let staged = staging.keep();
    fs::rename(&staged, out).map_err(|e| Error::io(out, e))?;
    Manifest::read(out.join(MANIFEST_FILE))
}

fn load_split(data: &Path, split: Split, blank: bool) -> Result<Vec<LabeledCase>> {
    let manifest = Manifest::read(data.join(MANIFEST_FILE))?;
    let mut cases = manifest.load(Some(split))?;
    if cases.is_empty() {
        return Err(Error::Data(format!("split `{split}` of {} is empty", data.display())));
    }
    if blank {
        for c in &mut cases {
            c.volume.blank();
        }
    }
    Ok(cases)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub model: ModelKind,
    pub blank_volumes: bool,
    pub best_epoch: u32,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub mean_epoch_seconds: f64,
    pub train: MetricsReport,
    pub val: MetricsReport,
}

/// Trains on the dataset in `data` and writes the best checkpoint, the
/// per-epoch log and a train/val metrics summary into `out`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    data: &Path,
    out: &Path,
    kind: ModelKind,
    blank: bool,
) -> Result<TrainSummary> {
    let train = load_split(data, Split::Train, blank)?;
    let val = load_split(data, Split::Val, blank)?;
    let model = match kind {
        ModelKind::NeuroDram => {
            let mut m = NeuroDram::new(cfg.model.clone(), cfg.seed)?;
            m.standardizer = Standardizer::fit(&read_context_bank(data.join(CONTEXT_BANK_FILE))?);
            Model::NeuroDram(m)
        }
        ModelKind::BaselineCnn => Model::Baseline(BaselineCnn::new(cfg.baseline.clone(), cfg.seed)?),
    };
    create_dir(out)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let tmp_log = out.join(format!(".{TRAIN_LOG_FILE}.tmp"));
    let _ = fs::remove_file(&tmp_log);
    let result = match fit(&train, &val, model, &cfg.train, Some(&tmp_log)) {
        Ok(r) => r,
        Err(e) => {
            let _ = fs::remove_file(&tmp_log);
            return Err(e);
        }
    };

    let (train_metrics, _) = evaluate(&result.best, &train, cfg.train.eval_batch)?;
    let summary = TrainSummary {
        model: kind,
        blank_volumes: blank,
        best_epoch: result.best_epoch,
        epochs_run: result.log.len(),
        stop_reason: result.stop_reason,
        mean_epoch_seconds: result.mean_epoch_seconds(),
        train: train_metrics,
        val: result.best_val.clone(),
    };
    let meta = serde_json::json!({
        "best_epoch": result.best_epoch,
        "best_val": result.best_val,
        "blank_volumes": blank,
        "stop_reason": result.stop_reason,
        "seed": cfg.seed,
    });
    Checkpoint { model: result.best, meta }.save(out.join(CHECKPOINT_FILE))?;
    let metrics_path = out.join(METRICS_FILE);
    write_atomic(&metrics_path, to_json(&summary, &metrics_path)?.as_bytes())?;
    fs::rename(&tmp_log, &log_path).map_err(|e| Error::io(&log_path, e))?;
    Ok(summary)
}

/// Loads a checkpoint and rejects it when its architecture differs from the
/// active config.
pub fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    let matches = match &ck.model {
        Model::NeuroDram(m) => m.config == cfg.model,
        Model::Baseline(m) => m.config == cfg.baseline,
    };
    if !matches {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with a different {} architecture than the active config",
            path.display(),
            match ck.model.kind() {
                ModelKind::NeuroDram => "model",
                ModelKind::BaselineCnn => "baseline",
            }
        )));
    }
    Ok(ck)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalOutput {
    pub model: ModelKind,
    /// Split name, or the path of the transfer manifest.
    pub source: String,
    pub blank_volumes: bool,
    /// Cases whose missing context fields were imputed.
    pub imputed_cases: usize,
    pub metrics: MetricsReport,
}

pub enum EvalTarget<'a> {
    Split(Split),
    /// External manifest; missing context is imputed from the training bank.
    Transfer(&'a Path),
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data: &Path,
    target: EvalTarget<'_>,
    blank: bool,
) -> Result<EvalOutput> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let (cases, source, imputed_cases) = match target {
        EvalTarget::Split(s) => (load_split(data, s, blank)?, s.name().to_string(), 0),
        EvalTarget::Transfer(path) => {
            let manifest = Manifest::read(path)?;
            let mut cases = manifest.load(None)?;
            if cases.is_empty() {
                return Err(Error::Data(format!("transfer manifest {} lists no cases", path.display())));
            }
            let bank = read_context_bank(data.join(CONTEXT_BANK_FILE))?;
            let mut imputed = 0;
            for c in &mut cases {
                if c.context.present_fields().len() < crate::volume::Field::ALL.len() {
                    c.context = impute_context(&c.context, &bank)?.record;
                    imputed += 1;
                }
                if blank {
                    c.volume.blank();
                }
            }
            (cases, path.display().to_string(), imputed)
        }
    };
    let (metrics, _) = evaluate(&ck.model, &cases, cfg.train.eval_batch)?;
    Ok(EvalOutput { model: ck.model.kind(), source, blank_volumes: blank, imputed_cases, metrics })
}

/// Atomic write that creates missing parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_atomic(path, text.as_bytes())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    let text = to_json(value, path)?;
    write_text(path, &format!("{text}\n"))?;
    Ok(text)
}

/// One deterministic episode per requested case, as JSON lines. With no ids,
/// every case of `split` is traced.
pub fn cmd_trace(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data: &Path,
    case_ids: &[String],
    split: Split,
) -> Result<Vec<TrajectoryTrace>> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let Model::NeuroDram(model) = &ck.model else {
        return Err(Error::Data("trace needs a neuro-dram checkpoint".into()));
    };
    let manifest = Manifest::read(data.join(MANIFEST_FILE))?;
    let entries: Vec<_> = if case_ids.is_empty() {
        manifest.entries(Some(split)).collect()
    } else {
        let known: BTreeSet<&str> = manifest.cases.iter().map(|e| e.case_id.as_str()).collect();
        let missing: Vec<&str> = case_ids.iter().map(String::as_str).filter(|id| !known.contains(id)).collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!("unknown case ids: {}", missing.join(", "))));
        }
        case_ids.iter().map(|id| manifest.cases.iter().find(|e| &e.case_id == id).unwrap()).collect()
    };
    let cases: Vec<LabeledCase> = entries.iter().map(|e| manifest.load_entry(e)).collect::<Result<_>>()?;
    let episodes = model.evaluate_episodes(&cases, model.eval_mode(), cfg.seed, cfg.train.eval_batch)?;
    Ok(episodes.iter().zip(&cases).map(|(e, c)| TrajectoryTrace::from_episode(e, c.signal_center)).collect())
}

pub fn traces_to_jsonl(traces: &[TrajectoryTrace]) -> Result<String> {
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(t).map_err(|e| Error::json(TRACE_FILE, e))?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct VerifyReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradcheckSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isolation: Option<IsolationSuite>,
    pub passed: bool,
}

/// Runs the requested suites (all of them when `suites` is empty).
/// `disable_stops` removes the gradient stop in the isolation suite.
pub fn cmd_verify(suites: &[Suite], seed: u64, disable_stops: bool) -> Result<VerifyReport> {
    let all = [Suite::Gradcheck, Suite::Policy, Suite::Isolation];
    let suites = if suites.is_empty() { &all[..] } else { suites };
    let mut r = VerifyReport::default();
    for s in suites {
        match s {
            Suite::Gradcheck => r.gradcheck = Some(gradcheck_suite(seed)?),
            Suite::Policy => r.policy = Some(policy_suite(POLICY_SAMPLES, seed)?),
            Suite::Isolation => r.isolation = Some(isolation_suite(seed, !disable_stops)?),
        }
    }
    r.passed = r.gradcheck.as_ref().is_none_or(|s| s.passed)
        && r.policy.as_ref().is_none_or(|s| s.passed)
        && r.isolation.as_ref().is_none_or(|s| s.passed);
    Ok(r)
}
