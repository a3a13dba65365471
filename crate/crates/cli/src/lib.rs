//! File formats, reports and subcommands around `cohortdid-core`.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod plot;
pub mod report;
pub mod simulate;

pub use config::RunConfig;
