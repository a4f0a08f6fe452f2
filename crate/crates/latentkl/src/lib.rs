//! Monte Carlo verification harness, file formats and command line for
//! [`latentkl_core`].
//!
//! - [`montecarlo`]: per-replication estimators of every error functional,
//!   deterministic parallel runs and convergence studies.
//! - [`config`]: the JSON experiment description.
//! - [`io`]: CSV writers and readers.
//! - [`cli`]: the `latentkl` command.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod montecarlo;

pub use error::{Error, Result};
