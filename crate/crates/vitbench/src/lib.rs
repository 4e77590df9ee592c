//! File formats, dataset discovery, configuration, reports and the command
//! line around `vitbench-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod imageio;
pub mod output;
pub mod report;
pub mod synthetic;

pub use error::{Error, Result};
