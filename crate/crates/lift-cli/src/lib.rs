//! Std companion to `lift-core`: file formats, manifests, checkpoints, and
//! the `lift` command-line pipelines.

pub mod checkpoint;
pub mod cli;
pub mod featureio;
pub mod manifest;

pub use cli::run;
