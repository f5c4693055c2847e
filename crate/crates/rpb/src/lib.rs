//! Experiment runner for tracking-preserving performance boosting.
//!
//! `rpb-core` does the math; this crate adds what needs `std`: TOML
//! configuration, CSV/JSON artifacts, SVG trajectory plots, a rayon-backed
//! executor and the four CLI commands (`simulate`, `train`, `eval`,
//! `check-robustness`).

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;
pub mod plot;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use exec::Rayon;
