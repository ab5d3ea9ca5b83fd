//! Dense row-major tensors.
//!
//! Shapes are kept as `Vec<usize>`; in practice the model uses rank 0..=3.
//! Tensors are plain value holders — differentiation lives in [`crate::graph`].

use crate::error::{McvqaError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(McvqaError::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![F::zero(); numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: F) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Row-major matrix constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<F>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1, "item() on tensor with {} elements", self.numel());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of rows when viewed as 2-d (rank must be 2).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at2(&self, r: usize, c: usize) -> F {
        self.data[r * self.shape[1] + c]
    }

    pub fn map<G: Scalar>(&self, f: impl Fn(F) -> G) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Cast between scalar types through f64.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        self.map(|v| G::from_f64_lossy(v.to_f64_lossy()))
    }

    pub fn max_abs(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |acc, v| acc.max(v.abs()))
    }
}

/// Iterate all "lanes" along `axis`: yields (base offset, stride, lane length).
/// A lane visits indices `base + k*stride` for `k in 0..len`.
pub(crate) fn lanes(shape: &[usize], axis: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    (0..outer).flat_map(move |o| {
        (0..inner).map(move |i| (o * len * inner + i, inner))
    })
}

pub(crate) fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(McvqaError::Dimension(format!(
            "axis {} out of range for shape {:?}",
            axis, shape
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_data_len() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, McvqaError::Dimension(_)));
    }

    #[test]
    fn lane_iteration_covers_axis() {
        // 2x3 tensor, axis 1: two lanes of stride 1
        let l: Vec<_> = lanes(&[2, 3], 1).collect();
        assert_eq!(l, vec![(0, 1), (3, 1)]);
        // axis 0: three lanes of stride 3
        let l: Vec<_> = lanes(&[2, 3], 0).collect();
        assert_eq!(l, vec![(0, 3), (1, 3), (2, 3)]);
    }
}
