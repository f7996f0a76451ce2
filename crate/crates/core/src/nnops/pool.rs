use super::Tensor;
use crate::error::{Error, Result};

/// Max pooling over a `[C, H, W]` input, no padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
}

impl PoolGeometry {
    pub fn out_h(&self) -> usize {
        (self.h - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - self.kw) / self.sw + 1
    }

    pub fn output_len(&self) -> usize {
        self.c * self.out_h() * self.out_w()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kh == 0 || self.kw == 0 || self.sh == 0 || self.sw == 0 {
            return Err(Error::Shape(format!("degenerate pooling {self:?}")));
        }
        if self.h < self.kh || self.w < self.kw {
            return Err(Error::Shape(format!(
                "pooling window {}x{} larger than input {}x{}",
                self.kh, self.kw, self.h, self.w
            )));
        }
        Ok(())
    }

    /// Writes pooled values and, per output, the flat input index of the
    /// (first) maximum.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64], argmax: &mut [usize]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for c in 0..self.c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for a in 0..self.kh {
                        for b in 0..self.kw {
                            let idx = (c * self.h + i * self.sh + a) * self.w + j * self.sw + b;
                            if x[idx] > best || (a == 0 && b == 0) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (c * oh + i) * ow + j;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }

    /// Routes each upstream gradient to its argmax position (accumulating).
    pub fn backward_accumulate(&self, grad_out: &[f64], argmax: &[usize], grad_x: &mut [f64]) {
        for (g, &idx) in grad_out.iter().zip(argmax) {
            grad_x[idx] += g;
        }
    }
}

fn geometry(input: &Tensor, kernel: [usize; 2], stride: [usize; 2]) -> Result<PoolGeometry> {
    input.expect_rank(3, "maxpool input")?;
    let s = input.shape();
    let g = PoolGeometry {
        c: s[0],
        h: s[1],
        w: s[2],
        kh: kernel[0],
        kw: kernel[1],
        sh: stride[0],
        sw: stride[1],
    };
    g.validate()?;
    Ok(g)
}

/// Returns the pooled tensor and the argmax index of every output element.
pub fn maxpool(input: &Tensor, kernel: [usize; 2], stride: [usize; 2]) -> Result<(Tensor, Vec<usize>)> {
    let g = geometry(input, kernel, stride)?;
    let mut out = vec![0.0; g.output_len()];
    let mut argmax = vec![0; g.output_len()];
    g.forward_into(input.data(), &mut out, &mut argmax);
    Ok((Tensor::new(vec![g.c, g.out_h(), g.out_w()], out)?, argmax))
}

pub fn maxpool_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "{} upstream gradients for {} pooled outputs",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(input_shape);
    if let Some(&bad) = argmax.iter().find(|&&i| i >= gx.len()) {
        return Err(Error::Index {
            index: bad,
            len: gx.len(),
        });
    }
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        gx.data_mut()[idx] += g;
    }
    Ok(gx)
}
