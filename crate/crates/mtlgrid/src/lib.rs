//! Training engine for multi-task learning on grid-structured
//! classification tasks, where labels factor into row x column (for
//! example 3 scripts x 10 digits, or an 11 x 7 character grid).
//!
//! Three objectives are supported: a plain cross-entropy baseline, a
//! sigma-weighted multi-task loss over digit and script heads, and a
//! factored loss whose auxiliary head predicts a 4-class correctness code
//! derived from the main head's own predictions; the batch sum of those
//! codes scales the main loss.
//!
//! See the `examples/` directory for one runnable program per capability,
//! and the `mtlgrid` binary for the `inspect` / `train` / `report` CLI.

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod model;
pub mod report;
pub mod synth;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
