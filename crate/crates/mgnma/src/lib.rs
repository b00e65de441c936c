//! File formats, dataset manifests, checkpoints and the command-line driver
//! around the `mgnma-core` numerical crate.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod manifest;
pub mod report;

pub use error::{Error, Result};
