//! Experiment harness around `drasym-core`: configuration files, run
//! orchestration (solver trials, predictor runs, gamma sweeps), and CSV
//! emission.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{
    apply_overrides, parse_config, serialize_config, ConfigError, ExperimentConfig, Overrides,
    RunMode,
};
pub use report::{config_hash, meta_path, render_csv, write_outputs, CSV_HEADER};
pub use runner::{
    execute, run_both, run_empirical, run_prediction, sweep_gamma, ExecutionReport, ResultRow,
    RunnerError, SweepOutcome,
};
