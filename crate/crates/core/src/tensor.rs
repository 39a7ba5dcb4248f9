//! Dense row-major float tensors.
//!
//! [`Tensor`] is deliberately plain: a shape vector, a flat `f32` buffer in
//! row-major order, a `requires_grad` marker, and an optional gradient buffer
//! of the same length. All structure-aware arithmetic lives in the autodiff
//! kernels; this type only owns storage and validates shapes.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Error for constructors and reshapes whose element counts disagree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeMismatch {
    /// Element count implied by the requested shape.
    pub expected: usize,
    /// Element count actually supplied.
    pub actual: usize,
}

impl fmt::Display for ShapeMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "shape expects {} elements but buffer holds {}",
            self.expected, self.actual
        )
    }
}

impl core::error::Error for ShapeMismatch {}

/// Dense row-major tensor of `f32` values with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    /// Whether gradients should flow to this tensor during backpropagation.
    pub requires_grad: bool,
    /// Accumulated gradient, same length as `data`; `None` until first use.
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    /// Creates a tensor from a shape and matching flat buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self, ShapeMismatch> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(ShapeMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Creates a zero-filled tensor of the given shape.
    #[must_use]
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product::<usize>();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// Creates a tensor filled with a constant.
    #[must_use]
    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product::<usize>();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a gradient target and returns it (builder style).
    #[must_use]
    pub fn tracked(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// The shape as a slice of dimension sizes.
    #[must_use]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Size of dimension `i`. Panics if `i` is out of range.
    #[must_use]
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    /// Total number of elements.
    #[must_use]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the trailing dimension, or 1 for rank-0 tensors.
    #[must_use]
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all dimensions except the last: the number of "rows" when
    /// the tensor is viewed as a 2-D matrix `[rows, last_dim]`.
    #[must_use]
    pub fn leading(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    /// Flat read-only view of the data.
    #[must_use]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Flat mutable view of the data.
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Consumes the tensor, returning its flat buffer.
    #[must_use]
    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Returns a copy with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, ShapeMismatch> {
        let expected = shape.iter().product::<usize>();
        if expected != self.data.len() {
            return Err(ShapeMismatch {
                expected,
                actual: self.data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
            requires_grad: self.requires_grad,
            grad: None,
        })
    }

    /// Adds `delta` into the gradient buffer, allocating zeros on first use.
    ///
    /// Panics if `delta` length differs from the data length (caller bug).
    pub fn accumulate_grad(&mut self, delta: &[f32]) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        let grad = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Adds `scale * delta` into the gradient buffer (see
    /// [`accumulate_grad`](Self::accumulate_grad)); used when averaging
    /// per-sample gradients into a batch gradient.
    pub fn accumulate_grad_scaled(&mut self, delta: &[f32], scale: f32) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        let grad = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += scale * d;
        }
    }

    /// Clears the gradient buffer to zeros if present.
    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// Simultaneous mutable access to the data and its gradient buffer
    /// (disjoint fields), for in-place optimizer updates.
    pub fn data_and_grad(&mut self) -> (&mut [f32], Option<&mut [f32]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_element_count() {
        let err = Tensor::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(err, ShapeMismatch { expected: 6, actual: 5 });
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn leading_and_last_dim_flatten_rows() {
        let t = Tensor::zeros(&[4, 5, 6]);
        assert_eq!(t.leading(), 20);
        assert_eq!(t.last_dim(), 6);
        assert_eq!(t.numel(), 120);

        let scalar = Tensor::zeros(&[]);
        assert_eq!(scalar.leading(), 1);
        assert_eq!(scalar.last_dim(), 1);
        assert_eq!(scalar.numel(), 1);
    }

    #[test]
    fn reshape_preserves_data_and_rejects_bad_counts() {
        let t = Tensor::from_vec(&[2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        let r = t.reshaped(&[3, 2]).unwrap();
        assert_eq!(r.as_slice(), t.as_slice());
        assert!(t.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn grad_accumulation_adds_and_allocates_lazily() {
        let mut t = Tensor::zeros(&[3]);
        assert!(t.grad.is_none());
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[0.5, 0.5, 0.5]);
        assert_eq!(t.grad.as_deref(), Some(&[1.5, 2.5, 3.5][..]));
        t.zero_grad();
        assert_eq!(t.grad.as_deref(), Some(&[0.0, 0.0, 0.0][..]));
    }
}
