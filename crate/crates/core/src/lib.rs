//! Multitask audio-visual emotion/identity training with adversarial
//! embedding disentanglement.
//!
//! The crate is organized as a small define-by-run autodiff engine
//! ([`tape`]) with the layers, model graph, objectives and training
//! strategies built on top of it, plus the evaluation machinery
//! (probe classifiers, macro-F / accuracy metrics, marginal homogeneity
//! test) used to quantify how much label information leaks between the
//! emotion and speaker embeddings.
//!
//! Everything here is pure computation over heap-allocated `f64` arrays:
//! the crate is `no_std` (with `alloc`) and leaves file formats and the
//! command line to the companion `detangle` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod eval;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod probe;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::Error;
pub use tensor::DenseArray;
