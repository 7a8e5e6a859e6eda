//! Reverse-mode differentiable tensor engine covering exactly the operations
//! the attention model and the baseline CNN need, plus ADAM and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
pub mod kernels;
mod lstm;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, Mismatch};
pub use graph::{bce_loss, sigmoid, softplus, BnMode, BnStats, Gradients, Graph, Var};
pub use lstm::{lstm_cell, LstmWeights};
pub use params::{Group, Param, ParamStore};
pub use tensor::Tensor;
