//! Price-aware dispatch and power split control for a heterogeneous
//! multi-string battery.
//!
//! The crate is organised around one closed loop:
//!
//! - [`ingest`] loads or synthesises 15-minute load, PV and price profiles;
//! - [`market`] prices grid exchange and the no-battery baseline;
//! - [`plant`] simulates each string electro-thermally;
//! - [`env`] wraps the plant as an episodic environment;
//! - [`dispatcher`] and [`policy`] provide controllers for it;
//! - [`metrics`] and [`scenario`] turn trajectories into reports.
// NaN must fail these checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dispatcher;
pub mod env;
pub mod forecast;
pub mod ingest;
pub mod market;
pub mod metrics;
pub mod plant;
pub mod policy;
pub mod scenario;

use std::path::PathBuf;

/// Length of one simulation step in hours.
pub const STEP_HOURS: f64 = 0.25;
/// Steps in one day at the native resolution.
pub const STEPS_PER_DAY: usize = 96;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("solver error at step {step}: {message}")]
    Solver { step: usize, message: String },
    #[error("training error: {0}")]
    Training(String),
    #[error("environment error: {0}")]
    State(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } | Error::Index { .. } => 3,
            Error::Solver { .. } => 4,
            Error::Training(_) => 5,
            Error::Domain(_) | Error::State(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
