//! Dense row-major tensors over a real scalar type.
//!
//! Training runs on `f32` storage; gradient checking runs the same code in
//! `f64` for headroom. Everything numeric in this crate is generic over
//! [`Scalar`] so both modes share one implementation.

use num_traits::Float;
use rand::distributions::uniform::SampleUniform;

use super::DiffError;

/// Real scalar usable as tensor storage: `f32` or `f64`.
pub trait Scalar:
    Float + SampleUniform + Default + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense tensor with row-major data. Rank 0 (scalar) uses an empty shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor, validating the data length and rejecting non-finite
    /// values.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, DiffError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(DiffError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DiffError::NonFinite { op: "new" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![S::zero(); len],
        }
    }

    pub fn scalar(v: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix; panics only via the length check in `new`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, DiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// True for rank-0 tensors and single-element vectors.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1
    }

    /// The single element of a scalar tensor.
    pub fn scalar_value(&self) -> Option<S> {
        if self.is_scalar() {
            Some(self.data[0])
        } else {
            None
        }
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> Option<&[S]> {
        if self.rank() != 2 || r >= self.shape[0] {
            return None;
        }
        let cols = self.shape[1];
        Some(&self.data[r * cols..(r + 1) * cols])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Casts storage to another scalar type (used on container save/load).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }
}
