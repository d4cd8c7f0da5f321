//! Deep bias-free ReLU networks in the lazy-training regime, their exact
//! limiting neural tangent kernels, spectral lower bounds and kernel
//! regression, with the data generators used to exercise them.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod kernelreg;
pub mod network;
pub mod ntk;
pub mod training;
pub mod numerics;
pub mod spectrum;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
