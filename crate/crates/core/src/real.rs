//! Scalar abstraction: every numeric routine in this crate is generic over a
//! floating-point storage type. Values are held in `T` (f32 in the shipped
//! pipeline, f64 where tests need extra headroom) while reductions, SVDs and
//! other accumulating loops run in f64 regardless of `T`.

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point storage scalar: f32 or f64.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + ScalarOperand
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless widening into the accumulator type.
    fn acc(self) -> f64;
    /// Rounding narrow from the accumulator type.
    fn from_acc(v: f64) -> Self;
}

impl Real for f32 {
    #[inline(always)]
    fn acc(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline(always)]
    fn acc(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v
    }
}
