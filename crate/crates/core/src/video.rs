//! Grayscale spatiotemporal tensors and their pixels-by-frames matrix view.
//!
//! A [`VideoSequence`] stores a (height, width, frames) volume. Solvers operate
//! on the matrix view whose rows are pixel trajectories and whose columns are
//! frames; the reshape in both directions is lossless.

use crate::error::{CoreError, Result};
use crate::real::Real;
use ndarray::{Array2, Array3};

/// A grayscale video volume, shape (height, width, frames).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence<T: Real> {
    data: Array3<T>,
}

impl<T: Real> VideoSequence<T> {
    pub fn new(data: Array3<T>) -> Self {
        Self { data }
    }

    pub fn zeros(height: usize, width: usize, frames: usize) -> Self {
        Self {
            data: Array3::zeros((height, width, frames)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn frames(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<T> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<T> {
        self.data
    }

    /// Pixels-by-frames matrix view: row p is the trajectory of pixel p
    /// (row-major over (y, x)), column t is frame t.
    pub fn to_matrix(&self) -> Array2<T> {
        let (h, w, f) = self.data.dim();
        self.data
            .to_shape((h * w, f))
            .expect("C-order (h, w, t) volume reshapes to (h*w, t) without copy")
            .to_owned()
    }

    /// Inverse of [`to_matrix`](Self::to_matrix) for the given frame geometry.
    pub fn from_matrix(m: &Array2<T>, height: usize, width: usize) -> Result<Self> {
        let (pixels, frames) = m.dim();
        if pixels != height * width {
            return Err(CoreError::Contract(format!(
                "matrix has {pixels} rows, expected {height}x{width}={}",
                height * width
            )));
        }
        let data = m
            .to_shape((height, width, frames))
            .expect("row count checked above")
            .to_owned();
        Ok(Self { data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute difference to another sequence of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), |m, d| if d > m { d } else { m })
    }
}
