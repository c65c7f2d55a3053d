//! Dense `f32` tensors and a tape-based reverse-mode differentiator.
//!
//! [`Tensor`] is a plain value: a shape and a row-major buffer. Values that
//! take part in differentiation live on a [`Tape`] and are addressed through
//! [`Var`] handles. A tape records every primitive in creation order, which
//! is a valid topological order, and [`Tape::backward`] walks it in reverse.
//!
//! ```
//! use relmap::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.var(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
//! let y = x.mul(x).unwrap().sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::grad_check;
pub(crate) use kernels::patch_gather_index;
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Shaped, row-major `f32` buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> f32 {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i} of size {dim}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }
}
