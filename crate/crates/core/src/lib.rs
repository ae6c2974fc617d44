//! ADMM-based neural network weight pruning and weight
//! clustering/quantization.
//!
//! The library trains small dense/convolutional networks, prunes them to
//! per-layer cardinality targets and discretizes the surviving weights to
//! equal-distance levels or shared centroids, all through one alternating
//! optimization engine, then packs the result into a compact bitstream
//! with compression-ratio accounting.

pub mod admm;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod finalize;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod projection;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{PruneMask, WeightTensor};
