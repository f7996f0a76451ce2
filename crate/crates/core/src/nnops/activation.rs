use super::Tensor;
use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[inline]
pub fn selu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

/// d selu / dx, using the left branch at 0.
#[inline]
pub fn selu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

pub fn selu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| selu_scalar(v)).collect(),
    }
}

/// Gradient w.r.t. the activation input, given the input and the upstream
/// gradient.
pub fn selu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape != grad_out.shape {
        return Err(Error::Shape(format!(
            "selu backward: input {:?} vs gradient {:?}",
            x.shape, grad_out.shape
        )));
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&v, &g)| g * selu_derivative(v))
            .collect(),
    })
}
