//! Experiment configuration, pipeline stages, error metrics and timing.

pub mod bench;
pub mod config;
pub mod metrics;
pub mod pipeline;

pub use bench::{benchmark_online, BenchmarkOptions, BenchmarkRow};
pub use config::{CollocationConfig, ExperimentConfig, Method, ParamSpec};
pub use metrics::{relative_error, trajectory_error, ErrorSummary};
pub use pipeline::{run_experiment, ErrorReport, ReportRow};
