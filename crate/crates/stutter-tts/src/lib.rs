//! File formats, corpus directories, checkpoints, run drivers and the
//! command-line interface around `stutter-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod run;

pub use error::{Error, Result};
