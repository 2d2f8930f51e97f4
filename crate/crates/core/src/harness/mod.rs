//! Latency experiments comparing the bus against a bound-service baseline,
//! and a scenario runner that replays sensor scripts through rules and stubs.

mod baseline;
mod experiment;
mod report;
mod scenario;
mod stats;

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::bus::BusError;
use crate::registry::{ManifestError, RegistryError};
use crate::rules::RuleError;
use crate::services::FixtureError;
use crate::sse::SensorError;

pub use baseline::{BaselineCounters, BoundService, Bundle, BundleValue, CounterSnapshot};
pub use experiment::{
    run_experiment, run_grid, run_paired, sample_baseline_round_trip, sample_bus_round_trip, ExperimentSpec,
    LatencyReport, PairedReport, Parallelism, Transport,
};
pub use report::{write_paired, write_reports};
pub use scenario::{run_scenario, TraceEntry, TraceLog};
pub use stats::{harmonic_mean, median, p99, percentile, perf_rate, StatsError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("service setup failed: {0}")]
    ServiceSetupFailed(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("system did not settle within {0:?}")]
    Unsettled(Duration),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: ManifestError,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// True for problems with the caller's input (specs, rule files,
    /// fixtures, scripts) as opposed to failures while running.
    pub fn is_input_error(&self) -> bool {
        match self {
            HarnessError::InvalidSpec(_)
            | HarnessError::Io { .. }
            | HarnessError::Manifest { .. }
            | HarnessError::Rules(RuleError::Parse { .. } | RuleError::DuplicateRuleName(_) | RuleError::BadPath(_))
            | HarnessError::Fixture(_) => true,
            HarnessError::Sensor(e) => matches!(e, SensorError::Script { .. } | SensorError::BadSample(_)),
            _ => false,
        }
    }
}
