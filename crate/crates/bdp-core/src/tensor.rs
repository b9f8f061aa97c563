//! Shape-tagged dense arrays of 64-bit reals, row-major.
//!
//! This is deliberately small: the privacy math only needs flat vectors and
//! rectangular batches, so there is no broadcasting, no views, no strides.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("zero-sized dimension in shape {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("expected a {expected}-d tensor, got shape {shape:?}")]
    RankMismatch { expected: usize, shape: Vec<usize> },
}

/// Dense row-major tensor of `f64`. All public constructors reject
/// non-finite entries so downstream code can assume finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let len = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![0.0; len],
        })
    }

    /// The canonical "no data" tensor, used where an operation takes no
    /// labels. This is the only way to obtain a zero-length tensor.
    pub fn empty() -> Self {
        Self {
            shape: vec![0],
            data: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterpret the buffer under a new shape of identical volume.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    /// Interpret as `[rows, cols]`, flattening any trailing dimensions.
    /// `[n, h, w]` becomes `[n, h*w]`; a 1-d tensor becomes `[n, 1]`.
    pub fn as_matrix(&self) -> (usize, usize) {
        match self.shape.len() {
            0 | 1 => (self.shape.first().copied().unwrap_or(0), 1),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::RankMismatch {
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Row `i` of the `[rows, cols]` matrix view.
    pub fn row(&self, i: usize) -> &[f64] {
        let (_, cols) = self.as_matrix();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn num_rows(&self) -> usize {
        self.as_matrix().0
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn validate_finite(&self) -> Result<(), TensorError> {
        check_finite(&self.data)
    }
}

pub(crate) fn check_finite(data: &[f64]) -> Result<(), TensorError> {
    for (index, &value) in data.iter().enumerate() {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { index, value });
        }
    }
    Ok(())
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    #[allow(unused_imports)]
    use num_traits::Float;
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_volume() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn rejects_zero_dims_and_non_finite() {
        assert!(matches!(
            Tensor::new(vec![0, 3], vec![]),
            Err(TensorError::ZeroDim(_))
        ));
        let err = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { index: 1, .. }));
    }

    #[test]
    fn matrix_view_flattens_trailing_dims() {
        let t = Tensor::zeros(vec![4, 2, 3]).unwrap();
        assert_eq!(t.as_matrix(), (4, 6));
        assert_eq!(t.row(3).len(), 6);
    }

    #[test]
    fn empty_tensor_is_explicit() {
        let e = Tensor::empty();
        assert!(e.is_empty());
        assert_eq!(e.len(), 0);
    }
}
