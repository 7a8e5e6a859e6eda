//! Experiment plumbing behind the `neurodram` binary: config, the five
//! commands, trajectory export and the verification suites.

mod commands;
mod config;
mod trace;
pub mod verify;

pub use commands::{
    cmd_eval, cmd_generate, cmd_trace, cmd_train, cmd_verify, load_checkpoint, resolve_config, traces_to_jsonl,
    write_json, write_text, EvalOutput, EvalTarget, TrainSummary, VerifyReport, CHECKPOINT_FILE, METRICS_FILE,
    POLICY_SAMPLES, TRACE_FILE, TRAIN_LOG_FILE,
};
pub use config::{DataConfig, ExperimentConfig};
pub use trace::{TraceStep, TrajectoryTrace};
pub use verify::Suite;
