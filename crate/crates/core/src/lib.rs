//! Streaming video sequence reasoning on a small decoder-only transformer.
//!
//! The crate is `no_std` (with `alloc`) and carries every algorithmic piece of
//! the pipeline:
//!
//! - [`numerics`]: dense kernels, a reverse-mode tape and finite-difference checking
//! - [`ingest`]: frame streams, temporal unitization, pooling and text tokens
//! - [`translator`]: the linear projection from visual features to hidden space
//! - [`reasoner`]: the causal transformer with an incremental streaming session
//! - [`adapters`]: tuning partitions, LoRA, prompt and prefix banks
//! - [`heads`]: online, anticipation, memory, dense and caption heads
//! - [`matching`]: Hungarian assignment and the segment set loss
//! - [`metrics`]: recall, segmental, detection and captioning metrics
//! - [`synthworld`]: the synthetic event-stream generator and its oracle
//! - [`model`] and [`trainer`]: model assembly, task losses and optimization
//!
//! File formats, the CLI and the multi-threaded training driver live in the
//! `videollm` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![warn(rust_2018_idioms)]

extern crate alloc;

pub mod adapters;
pub mod error;
pub mod heads;
pub mod ingest;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod reasoner;
pub mod synthworld;
pub mod trainer;
pub mod translator;

pub use error::{Error, Result};
pub use numerics::{Real, Tensor};
