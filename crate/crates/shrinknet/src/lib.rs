//! Deep residual shrinkage networks for multichannel 1-D signal
//! classification, built on a self-contained reverse-mode autodiff core,
//! with classical baselines and a reproducible experiment harness.

// Index loops are the house style for the numeric kernels: the index is
// usually shared across several buffers and mirrors the math being coded.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod params;
pub mod report;
pub mod tape;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
