//! Synthetic traffic, replay, timing statistics, window CDFs and capacity
//! estimates.

mod capacity;
mod cdf;
pub mod generator;
mod harness;
mod replay;
mod stats;

use thiserror::Error;

pub use capacity::capacity_estimate;
pub use cdf::{unique_mmsi_cdf, CdfCurve, CdfPoint};
pub use generator::{generate, AnomalyInjection, AnomalyKind, GeneratedTraffic, Lane, SyntheticScenario, VesselTruth};
pub use harness::{run_benchmark, BenchConfig, BenchReport, ThroughputPoint};
pub use replay::{replay, replay_into_log, ReplayStats};
pub use stats::{quantile_sorted, timing_stats, TimingStats};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no samples")]
    EmptySamples,
    #[error("{field} must be > 0, got {value}")]
    Domain { field: &'static str, value: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Stream(#[from] crate::stream::StreamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
