//! Hybrid training: BCE for the classification pathway, REINFORCE for the
//! location and context pathway, early stopping and evaluation.

mod config;
mod fit;
mod hybrid;
mod metrics;
pub mod policy_check;
mod reinforce;
mod reward;

pub use config::TrainConfig;
pub use fit::{check_disjoint_subjects, evaluate, fit, EarlyStopping, EpochRecord, FitResult, StopReason, Timing};
pub use hybrid::{hybrid_pass, hybrid_train_step, HybridPass, Optimizers, StepReport};
pub use metrics::MetricsReport;
pub use reinforce::{reinforce_surrogate, BaselineSpec, RewardBaseline};
pub use reward::{compute_reward, step_reward, RewardSpec};
