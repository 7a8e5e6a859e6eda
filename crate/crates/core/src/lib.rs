//! NEURO-DRAM: a 3D recurrent visual attention model for volumetric
//! classification.
//!
//! An agent moves a small cubic glimpse through a volume, builds up a
//! recurrent summary, and classifies after a fixed number of steps. The
//! classification pathway is trained by binary cross-entropy; the location
//! and context pathway by REINFORCE. Gradients never cross between the two.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod model;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
