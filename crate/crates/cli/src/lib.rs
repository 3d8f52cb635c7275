//! Experiment runner for likelihood-based caption OOD detection.
//!
//! A TOML manifest names one in-distribution set and any number of OOD
//! sets; [`run_experiment`] scores them, computes AUROC / PRin / PRout /
//! Bhattacharyya distance per OOD set and over their union, and writes CSV,
//! JSON-lines and SVG outputs.

mod error;
pub mod experiment;
pub mod imageset;
pub mod manifest;
pub mod plot;

pub use error::{CliError, Result};
pub use experiment::{run_experiment, ExperimentOutcome, PairReport};
pub use manifest::{ExperimentManifest, ScoreKind, SetSpec};
