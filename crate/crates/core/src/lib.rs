//! Self-supervised anomaly detection with convolutional autoencoders trained on artificially
//! distorted images. Detection and localization take a single forward pass.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod distortion;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod image;
pub mod inference;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
