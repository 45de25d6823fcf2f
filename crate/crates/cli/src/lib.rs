//! Scenario runner: experiment configs, trial execution, metrics, renders.

pub mod config;
pub mod experiment;
pub mod render;

pub use config::{load_spec, parse_spec, ConfigError, ExperimentSection, ExperimentSpec, Mode};
pub use experiment::{run_experiment, run_trial, variants, MetricsRow, RunSummary, TrialError, METRICS_HEADER};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "COPERC_OUT";
pub const DEFAULT_OUT: &str = "runs";
