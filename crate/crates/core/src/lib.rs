//! Robust graph convolution: a two-layer GCN with explicit gradients,
//! gradient-based edge and feature attacks, adversarial-training defenses,
//! a sampled-neighborhood trainer, and evaluation metrics.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, reports and the
//! command-line driver live in the `graphdefense` crate.

#![no_std]

extern crate alloc;

pub mod attack;
pub mod defense;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod sage;
pub mod sparse;

pub use error::{Error, Result};
pub use graph::{DataSplit, Graph, NormalizedAdjacency, SyntheticSpec};
pub use matrix::Matrix;
pub use model::{GcnParams, GradientBundle, LossKind, TrainConfig};
pub use sparse::{Csr, Propagator};
