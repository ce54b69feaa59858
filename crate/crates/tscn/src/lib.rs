//! Command-line front end and file formats for two-stream consensus
//! training on snippet-level video features.
//!
//! The numeric work lives in `tscn-core`; this crate owns datasets on disk,
//! checkpoints, run configuration, reports and plots.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod plot;
pub mod report;

pub use error::{AppError, Result};
