//! Experiment harness for jointly trained ensembles: JSON configs, λ sweeps
//! with per-λ learning-rate selection, and plot-ready CSV output.

pub mod config;
pub mod sweep;

pub use config::{DataSource, ExperimentConfig, LEARNING_RATE_GRID, OUTPUT_DIR_ENV};
pub use sweep::{run_one, run_sweep, RunKey, RunResult, SweepManifest, SweepStatus};
