//! Command-line front end for `emlreg`: simulation benchmarks, bandwidth
//! sweeps, the real-data split/fine-tune pipeline, and single-model
//! train/evaluate. Every command writes plot-ready CSV plus a
//! `manifest.json` that `emlreg replay` can rerun bit for bit.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod jobs;
pub mod manifest;
pub mod sim;

pub use app::{run, Cli};
pub use config::{RunConfig, SplitSpec};
pub use error::{CliError, Result};
pub use ingest::{ingest_csv, Scaler};
pub use manifest::RunManifest;
