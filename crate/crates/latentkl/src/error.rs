use std::path::PathBuf;

use thiserror::Error;

/// Errors of the verification harness and its front-end.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] latentkl_core::Error),

    #[error("{failed} of {replications} replications failed (limit 1%); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        replications: usize,
        first: latentkl_core::Error,
    },

    #[error("at least {minimum} replications are needed, got {found}")]
    TooFewReplications { minimum: usize, found: usize },

    #[error(
        "Bayes grid too coarse at n = {n}: ln Z(X^n) changes by {:.3e} (limit {:.0e}) from {} to {} nodes per axis; raise quadrature.nodes_per_axis",
        report.change, report.tolerance, report.nodes_per_axis, 2 * report.nodes_per_axis
    )]
    GridRefinement {
        n: usize,
        report: latentkl_core::estimators::RefinementReport,
    },

    #[error("sample-size grid: {0}")]
    InvalidGrid(String),

    #[error(
        "extrapolated coefficient is too imprecise: stderr {stderr:.3e} exceeds half the theory value {theory:.3e}; raise the replication count"
    )]
    InsufficientPrecision {
        stderr: f64,
        theory: f64,
        series: Box<crate::montecarlo::ConvergenceSeries>,
    },

    #[error("{functional} is not defined for the {method} method")]
    Unsupported { functional: &'static str, method: &'static str },

    #[error("config {path}: `{key}`: {message} (line {line}, column {column})")]
    Config {
        path: PathBuf,
        /// Dotted path of the offending key, e.g. `study.replications`.
        key: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: malformed record {record}: {message}")]
    Format {
        path: PathBuf,
        record: usize,
        message: String,
    },

    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

/// Errors writing to a stream rather than a named file.
impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io {
            path: PathBuf::from("<stream>"),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(source: csv::Error) -> Self {
        Error::Csv {
            path: PathBuf::from("<stream>"),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
