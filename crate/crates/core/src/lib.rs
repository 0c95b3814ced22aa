//! Single-image snow removal with a window-attention encoder–decoder.
//!
//! * [`synth`] generates seeded snowy/clean pairs from a physical imaging model.
//! * [`model`] builds the network on top of the `snowformer-tensor` engine.
//! * [`train`] holds losses, the optimiser, the schedule and checkpoints.
//! * [`tiling`], [`metrics`] and [`eval`] cover padding-free inference and scoring.
//! * [`gradcheck`] checks the training loss gradient through a whole model.

mod config;
mod error;
pub mod eval;
pub mod gradcheck;
mod hash;
pub mod image_io;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tiling;
pub mod train;

pub use config::{Paths, RunConfig};
pub use error::{Error, Result};
pub use hash::config_sha256;
pub use snowformer_tensor as tensor;
pub use snowformer_tensor::Tensor;
