//! File formats, experiment drivers and the command-line front end for
//! `cbct-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod report;
pub mod robust;

pub use error::{CliError, CliResult};
