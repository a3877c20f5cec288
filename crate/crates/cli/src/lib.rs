//! Command-line pipeline over `geocausal-core`: every stage reads and
//! writes files under one run directory tracked by a content-hash manifest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod report;
pub mod stages;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use manifest::Manifest;
pub use stages::Run;
