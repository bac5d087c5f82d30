//! File formats, experiment configuration, reports and the command-line
//! driver around `graphdefense-core`.

pub mod changelog;
pub mod commands;
pub mod config;
pub mod error;
pub mod fsio;
pub mod io;
pub mod params;
pub mod report;

pub use config::{ExperimentConfig, GeneratorKind};
pub use error::{Error, Result};
pub use graphdefense_core as core;
