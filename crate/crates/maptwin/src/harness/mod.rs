//! Experiment orchestration: configuration presets, scheme rollouts, the
//! uplink-ratio sweep, the convergence study, oracle verification, and
//! metrics output.
//!
//! Everything here is deterministic per configuration: runs are driven by
//! the seeds listed in the config, results are merged in sorted order, and
//! rerunning a config reproduces every artifact byte for byte.

mod config;
mod experiments;
mod metrics;
pub mod oracle;

pub use config::{ExperimentConfig, Preset, SweepConfig};
pub use experiments::{
    convergence_study, evaluate_scheme, parallel_map, run_experiment, run_experiment_logged,
    sweep_high_rate_ratio, ConvergenceCurve, EpisodeStats, Scheme, SweepCell,
};
pub use metrics::{
    convergence_jsonl, metrics_csv, plot_data_columns, sweep_csv, MetricsRow,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Agent(#[from] crate::agent::AgentError),
    #[error(transparent)]
    Twin(#[from] crate::twin::TwinError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
}
