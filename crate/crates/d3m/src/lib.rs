//! File formats, run directories and the command-line driver for
//! [`d3m_core`].
//!
//! A run directory holds everything a pipeline produced: the effective
//! config, a manifest with per-stage timestamps and artifact digests, binary
//! parameter and attribution files, CSV tables and `report.json`. Stages whose
//! artifacts still verify are skipped when a run is repeated with the same
//! config.

pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pool;
pub mod report;
pub mod run;
pub mod tables;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use pool::ThreadPool;
pub use run::{cmd_generate, cmd_report, cmd_run, Mode, RunOptions};
