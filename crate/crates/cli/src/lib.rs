//! Reproducible experiment runner for `scatchain`: JSON configs in, CSV and
//! JSON artifacts out.

pub mod artifact;
pub mod config;
pub mod error;
pub mod run;

pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use run::{run, Check, RunSummary};
