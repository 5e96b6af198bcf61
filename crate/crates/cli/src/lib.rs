//! Experiment driver for `cdm-distill`: TOML configuration, the oracle
//! verification suite, distillation runs and exact-KL evaluation tables.

pub mod config;
pub mod error;
pub mod run;
pub mod verify;

pub use config::{Experiment, ExperimentConfig};
pub use error::CliError;
