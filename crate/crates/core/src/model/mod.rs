//! The attention agent's five sub-networks, the full-volume baseline CNN,
//! and checkpoints.

mod agent;
mod baseline;
mod checkpoint;
mod config;
mod trunk;

pub use agent::{
    reinforcement_prefixes, supervised_prefixes, AgentState, BatchDecision, Episode, LocationDecision, NeuroDram,
    Rollout, RolloutMode,
};
pub use baseline::{BaselineCnn, BaselineForward};
pub use checkpoint::{Checkpoint, Model, ModelKind, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{BaselineConfig, ModelConfig, TrunkSpec};
