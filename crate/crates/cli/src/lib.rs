//! Library half of the `cccvae` command: configuration, the train/evaluate
//! pipeline, run manifests and ablation sweeps.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use error::CliError;
