//! Command-line front end: ingestion, screening, pipelines and reports.

pub mod config;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod screen;

pub use config::{Command, RunConfig};
pub use error::{CliError, Result};
pub use ingest::{ingest_reader, ingest_triads, write_beta_csv, InputFormat};
pub use pipeline::{run_pipeline, PipelineSummary};
pub use screen::{screen_sites, ScreenStatus, SiteScreen};
