//! Batch front end for copula quantile/expectile hidden Markov regression:
//! data ingestion, descriptive statistics, fitting, model selection, decoding,
//! parametric bootstrap and Monte Carlo runs.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod output;
pub mod stats;

pub use config::{Overrides, RunConfig};
pub use ingest::{ingest, IngestOptions, Ingested, RawTable};
pub use output::{DataSection, ParameterDocument};
pub use stats::{describe, ColumnStats, DescriptiveStats};
