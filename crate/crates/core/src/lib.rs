//! Continual learning by pseudo-rehearsal over classifier embeddings.
//!
//! A single conditional normalizing flow learns the distribution of the
//! reconstruction embeddings of every task seen so far. At the start of each
//! new task the flow and a decoder synthesize a memory of past images paired
//! with the embeddings the classifier currently assigns them; the classifier
//! is then trained with a penalty that keeps those embeddings in place.
//!
//! This crate is `no_std` (it needs `alloc`). File IO, configuration and the
//! command line live in the companion `prer` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod math;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
