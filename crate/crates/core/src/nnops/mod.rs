//! Differentiable kernels for every layer type of the acoustic model.
//!
//! Each op exists twice: a shape-checked [`Tensor`] function for callers and
//! tests, and a slice kernel (`*_into` / `*_accumulate`) that the model uses
//! on preallocated buffers. Backward kernels accumulate into their gradient
//! buffers.

mod activation;
mod conv;
mod dense;
mod loss;
mod pool;

pub use activation::{selu, selu_backward, selu_derivative, selu_scalar, SELU_ALPHA, SELU_LAMBDA};
pub use conv::{conv2d, conv2d_backward, ConvGeometry};
pub use dense::{dense, dense_accumulate_backward, dense_backward, dense_into, dot};
pub use loss::{softmax_into, softmax_xent, softmax_xent_backward};
pub use pool::{maxpool, maxpool_backward, PoolGeometry};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() == rank {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape
            )))
        }
    }
}

/// Gradients produced by one layer's backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub params: Vec<(String, Tensor)>,
    pub input: Option<Tensor>,
}

impl LayerGrad {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}
