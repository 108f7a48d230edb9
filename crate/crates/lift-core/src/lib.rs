//! Core logic for LiFT-style video descriptors.
//!
//! A video is ingested as a `T x D` matrix of per-frame feature vectors. The
//! model compresses the sequence into a static/dynamic vector pair whose
//! latent trajectory is constrained to a straight line, which makes the
//! descriptor sensitive to the direction of change over time.
//!
//! This crate is `no_std` compatible (alloc required); all IO, file formats
//! and the command-line interface live in the companion `lift-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod chiral;
pub mod data;
pub mod model;
pub mod pool;
pub mod probe;
pub mod scalar;
pub mod stats;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use data::{FeatureSequence, Split};
pub use model::{Descriptor, LiftConfig, LiftParams};
pub use tensor::{Tensor, TensorError};
