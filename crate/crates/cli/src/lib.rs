//! Declarative runner for leader-follower experiments.
//!
//! A TOML config picks a mode (`simulate`, `optimize`, `meanfield`, `gamma`,
//! `stability`, `sweep`); [`validate_config`] turns it into an
//! [`ExperimentConfig`] and [`run_config_file`] executes it, writing CSV/JSON
//! artifacts plus a `manifest.json`.

pub mod config;
pub mod run;

pub use config::{emit, validate_config, validate_str, Diagnostic, ExperimentConfig, Mode};
pub use run::{output_dir, run, run_config_file, Failure, RunOptions, RunOutcome};
