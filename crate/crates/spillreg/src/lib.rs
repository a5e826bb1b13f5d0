//! Experiment harness around `spillreg-core`: configuration files, run
//! manifests, trace/curve/report/checkpoint formats, parallel evaluation
//! and the ablation runner behind the `spillreg` command.

pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod manifest;
pub mod numfmt;
pub mod parallel;

pub use config::{Overrides, Preset, RunConfig};
pub use error::{AppError, AppResult};
pub use manifest::RunManifest;
