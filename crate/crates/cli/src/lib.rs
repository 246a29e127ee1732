//! Experiment harness: configuration, seeded replica execution, statistics,
//! and result emission for both the tabular and the network-based worlds.

pub mod config;
pub mod experiment;
pub mod plots;
pub mod stats;

pub use config::{ExperimentConfig, Mode};
pub use experiment::{run_experiment, ExperimentSummary, ResultRow};
pub use stats::{paired_t_test, SummaryStats, TTest};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{failed} of {total} replicas failed (over the 20% budget); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Core(#[from] iso_core::CoreError),

    #[error(transparent)]
    Neural(#[from] iso_neural::NeuralError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
