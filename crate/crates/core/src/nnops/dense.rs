use super::{LayerGrad, Tensor};
use crate::error::{Error, Result};

/// Dot product with four independent partial sums (vectorizes without
/// reassociation licence from the compiler).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let (x, y) = (&a[4 * k..4 * k + 4], &b[4 * k..4 * k + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out = W x + b` for row-major `W` (`out.len() x x.len()`).
pub fn dense_into(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&w[i * n_in..(i + 1) * n_in], x) + b[i];
    }
}

/// Accumulates `dW += g x^T`, `db += g`, and `dx += W^T g` when requested.
pub fn dense_accumulate_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_x: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (i, &g) in grad_out.iter().enumerate() {
        grad_b[i] += g;
        if g == 0.0 {
            continue;
        }
        for (d, &xv) in grad_w[i * n_in..(i + 1) * n_in].iter_mut().zip(x) {
            *d += g * xv;
        }
    }
    if let Some(gx) = grad_x {
        for (i, &g) in grad_out.iter().enumerate() {
            for (d, &wv) in gx.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                *d += g * wv;
            }
        }
    }
}

fn check(x: &Tensor, w: &Tensor) -> Result<(usize, usize)> {
    x.expect_rank(1, "dense input")?;
    w.expect_rank(2, "dense weight")?;
    let (n_out, n_in) = (w.shape()[0], w.shape()[1]);
    if x.len() != n_in {
        return Err(Error::Shape(format!(
            "dense weight {:?} applied to input of length {}",
            w.shape(),
            x.len()
        )));
    }
    Ok((n_out, n_in))
}

/// Affine map `W x + b`; the activation is applied separately.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n_out, _) = check(x, w)?;
    if b.shape() != [n_out] {
        return Err(Error::Shape(format!("dense bias {:?}, expected [{n_out}]", b.shape())));
    }
    let mut out = vec![0.0; n_out];
    dense_into(x.data(), w.data(), b.data(), &mut out);
    Tensor::new(vec![n_out], out)
}

pub fn dense_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<LayerGrad> {
    let (n_out, n_in) = check(x, w)?;
    if grad_out.shape() != [n_out] {
        return Err(Error::Shape(format!(
            "dense upstream gradient {:?}, expected [{n_out}]",
            grad_out.shape()
        )));
    }
    let mut gw = vec![0.0; n_out * n_in];
    let mut gb = vec![0.0; n_out];
    let mut gx = vec![0.0; n_in];
    dense_accumulate_backward(x.data(), w.data(), grad_out.data(), &mut gw, &mut gb, Some(&mut gx));
    Ok(LayerGrad {
        params: vec![
            ("weight".into(), Tensor::new(vec![n_out, n_in], gw)?),
            ("bias".into(), Tensor::new(vec![n_out], gb)?),
        ],
        input: Some(Tensor::new(vec![n_in], gx)?),
    })
}
