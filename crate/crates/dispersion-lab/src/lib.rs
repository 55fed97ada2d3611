//! Experiment runner for the dispersive decay of `H = Δ² + V` on `ℝ⁴`.
//!
//! A JSON [`config::ExperimentConfig`] names one experiment; [`run_experiment`]
//! executes it and returns a [`report::Bundle`] of JSON, CSV and SVG outputs.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod plot;
pub mod report;
pub mod selftest;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{LabError, Result};
pub use experiments::{run_experiment, run_with_mode, Mode};
pub use fit::{fit_decay, DecayFit};
pub use report::Bundle;
