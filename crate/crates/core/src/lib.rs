//! Dual-stage video decomposition of grayscale sequences into a low-rank
//! background layer and a sparse moving-vessel layer.
//!
//! The crate stacks three decomposition stages behind one pipeline:
//!
//! * a classical batch RPCA solver (ISTA with singular value thresholding and
//!   row-group shrinkage) used as the numerical anchor, the baseline, and the
//!   weak-label generator;
//! * learned unrolled RPCA layers that replace the ISTA coefficient matrices
//!   with trainable spatiotemporal kernels and thresholds;
//! * a convolutional-LSTM back-projection head that refines and upsamples the
//!   sparse layer patch by patch.
//!
//! Everything numeric is generic over the [`Real`] storage scalar (f32 or
//! f64); reductions and SVDs always accumulate in f64. The shipped CLI and all
//! file formats use f32 storage; f64 instantiations back the solver oracles
//! and gradient checks.

pub mod clstm;
pub mod config;
pub mod conv;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod real;
pub mod rpca;
pub mod synth;
pub mod train;
pub mod unroll;
pub mod video;

pub use error::{CoreError, Result};
pub use real::Real;
pub use video::VideoSequence;

/// Storage scalar of the shipped pipeline and of every on-disk format.
pub type Scalar = f32;

/// Video volume as produced and consumed by the CLI.
pub type Video = VideoSequence<f32>;
/// Double-precision video volume for oracle-grade solves.
pub type VideoF64 = VideoSequence<f64>;

/// Pixels-by-frames matrix view at storage precision.
pub type Matrix = ndarray::Array2<f32>;
/// Pixels-by-frames matrix view at oracle precision.
pub type MatrixF64 = ndarray::Array2<f64>;
