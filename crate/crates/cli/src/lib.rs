//! Command implementations behind the `rhythmkit` binary.

pub mod dataset;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod extract;
pub mod model_cmd;
pub mod report;
pub mod synth_cmd;

pub use error::{CliError, Result};
