//! Experiment orchestration: configuration and presets, multi-repetition
//! runs, CSV metrics, aggregation, and the invariant checks behind
//! `amcsim check`.

pub mod aggregate;
pub mod checks;
pub mod config;
pub mod metrics;
pub mod runner;

pub use aggregate::{aggregate, SummaryRow};
pub use config::{preset_experiment_1, preset_experiment_2, ExperimentConfig};
pub use metrics::MetricsRow;
pub use runner::{run_experiment, write_outputs, ExperimentOutput};
