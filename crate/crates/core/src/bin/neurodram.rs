use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use neurodram::harness::{
    cmd_eval, cmd_generate, cmd_trace, cmd_train, cmd_verify, resolve_config, traces_to_jsonl, write_json, write_text,
    EvalTarget, Suite, TRACE_FILE,
};
use neurodram::model::ModelKind;
use neurodram::volume::Split;
use neurodram::Result;

#[derive(Parser)]
#[command(name = "neurodram", version, about = "3D recurrent visual attention on volumetric data")]
struct Cli {
    /// Experiment config (JSON). Omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    NeuroDram,
    BaselineCnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Gradcheck,
    Policy,
    Isolation,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into `--out`.
    Generate,
    /// Train a model; writes checkpoint, log and metrics into `--out`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "neuro-dram")]
        model: ModelArg,
        /// Zero every voxel of every volume.
        #[arg(long)]
        blank_volumes: bool,
    },
    /// Print metrics for a checkpoint as JSON and write them into `--out`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset the checkpoint was trained on.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Evaluate on every case of another manifest instead of a split.
        #[arg(long)]
        transfer: Option<PathBuf>,
        #[arg(long)]
        blank_volumes: bool,
    },
    /// Export deterministic trajectories as JSON lines.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split traced when no case ids are given.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        case_ids: Vec<String>,
    },
    /// Run the built-in verification suites (all by default).
    Verify {
        #[arg(value_enum)]
        suites: Vec<SuiteArg>,
        /// Remove the gradient stop between the two LSTMs. The isolation
        /// suite is expected to fail.
        #[arg(long, hide = true)]
        disable_stops: bool,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Generate => {
            let m = cmd_generate(&cfg, &cli.out)?;
            eprintln!("wrote {} cases to {}", m.cases.len(), cli.out.display());
        }
        Command::Train { data, model, blank_volumes } => {
            let kind = match model {
                ModelArg::NeuroDram => ModelKind::NeuroDram,
                ModelArg::BaselineCnn => ModelKind::BaselineCnn,
            };
            let summary = cmd_train(&cfg, &data, &cli.out, kind, blank_volumes)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Eval { checkpoint, data, split, transfer, blank_volumes } => {
            let (target, name) = match &transfer {
                Some(p) => (EvalTarget::Transfer(p), "eval_transfer.json".to_string()),
                None => (EvalTarget::Split(split.into()), format!("eval_{}.json", Split::from(split).name())),
            };
            let out = cmd_eval(&cfg, &checkpoint, &data, target, blank_volumes)?;
            println!("{}", write_json(&out, &cli.out.join(name))?);
        }
        Command::Trace { checkpoint, data, split, case_ids } => {
            let traces = cmd_trace(&cfg, &checkpoint, &data, &case_ids, split.into())?;
            let text = traces_to_jsonl(&traces)?;
            write_text(&cli.out.join(TRACE_FILE), &text)?;
            print!("{text}");
        }
        Command::Verify { suites, disable_stops } => {
            let suites: Vec<Suite> = suites
                .into_iter()
                .map(|s| match s {
                    SuiteArg::Gradcheck => Suite::Gradcheck,
                    SuiteArg::Policy => Suite::Policy,
                    SuiteArg::Isolation => Suite::Isolation,
                })
                .collect();
            let report = cmd_verify(&suites, cfg.seed, disable_stops)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
