//! Backtest and verification harness around the pathwise portfolio engine:
//! configuration, CSV ingestion, level sweeps, and report emission.

use thiserror::Error;

pub mod backtest;
pub mod config;
pub mod ingest;
pub mod report;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error(transparent)]
    Engine(#[from] pathwise_spt::Error),
}

/// Process exit codes: 0 pass, 1 diagnostics failed, 2 usage or I/O error.
pub const EXIT_PASS: u8 = 0;
pub const EXIT_DIAGNOSTICS: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
