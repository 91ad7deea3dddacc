//! Dense associative memory lab.
//!
//! The crate walks the lineage of associative memories, from classical
//! binary Hopfield networks through polynomial and exponential interactions
//! and the continuous softmax-retrieval formulation, up to a trainable
//! static-memory attention module, and wires that module into a toy
//! patch-transformer segmentation pipeline over synthetic occluded anatomy.
//!
//! Everything runs on a small float64 tensor engine with reverse-mode
//! differentiation ([`numerics`]); all randomness flows from explicit seeds
//! through [`numerics::rng`].

pub mod classical;
pub mod dam;
pub mod dense;
pub mod error;
pub mod modern;
pub mod numerics;
pub mod seg;

pub use error::{Error, Result};
