//! Simulation core for deep-kernel-learning autonomous experiments.
//!
//! Everything here is pure computation over in-memory data and builds
//! without `std`; file formats, the CLI and the HTTP service live in the
//! companion `aesim` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod acquisition;
pub mod dataset;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod rng;
pub mod sampling;
pub mod surrogate;

pub use error::{Error, Result};
