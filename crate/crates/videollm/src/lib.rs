//! File formats, the parallel training driver and the command-line surface
//! of the streaming video reasoner.
//!
//! - [`vlf`]: the binary frame-feature format
//! - [`vocab`]: plain-text vocabularies
//! - [`checkpoint`]: the checkpoint container
//! - [`dataset`]: synthetic datasets on disk
//! - [`config`]: the declarative run configuration
//! - [`parallel`]: rayon-backed batch gradients and evaluation
//! - [`commands`]: `synth`, `train`, `eval`, `stream`, `gradcheck` and `bench`

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod parallel;
pub mod vlf;
pub mod vocab;

pub use error::{CliError, Result};
