//! Core library for query-propagating video text spotting.
//!
//! The numerical layers ([`tensor`], [`geometry`], [`assignment`]) are generic
//! over the scalar type via [`scalar::Scalar`]; everything above them (model,
//! losses, tracker, metrics, data) works on the `f64` aliases exported at the
//! crate root, which is also the precision of the checkpoint format.

pub mod assignment;
pub mod data;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod tracker;

pub use error::{Error, Result};

/// Dense tensor at the crate's working precision.
pub type Tensor = tensor::Tensor<f64>;
/// Gradient tape at the crate's working precision.
pub type Tape = tensor::Tape<f64>;
/// Backward-pass result at the crate's working precision.
pub type Gradients = tensor::Gradients<f64>;
/// Rotated box at the crate's working precision.
pub type RotatedBox = geometry::RotatedBox<f64>;
