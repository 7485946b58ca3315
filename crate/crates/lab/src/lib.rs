//! Configuration, file formats, ensembles, cascade studies and reports for
//! `phasefield-core`. The `phasefield` binary wraps these functions.

pub mod audit;
pub mod config;
pub mod error;
pub mod formats;
pub mod initial;
pub mod manifest;
pub mod report;
pub mod runner;

pub use config::RunConfig;
pub use error::{LabError, Result};
