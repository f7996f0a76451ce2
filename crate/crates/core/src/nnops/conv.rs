use super::dense::dot;
use super::{LayerGrad, Tensor};
use crate::error::{Error, Result};

/// Shapes of a stride-1 2-D cross-correlation over a zero-padded input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeometry {
    pub fn padded_h(&self) -> usize {
        self.h + 2 * self.pad_h
    }

    pub fn padded_w(&self) -> usize {
        self.w + 2 * self.pad_w
    }

    pub fn out_h(&self) -> usize {
        self.padded_h() + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.padded_w() + 1 - self.kw
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn padded_len(&self) -> usize {
        self.c_in * self.padded_h() * self.padded_w()
    }

    pub fn filter_len(&self) -> usize {
        self.c_out * self.c_in * self.kh * self.kw
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.out_h() * self.out_w()
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.kh == 0 || self.kw == 0 {
            return Err(Error::Shape(format!("degenerate convolution {self:?}")));
        }
        if self.kh > self.padded_h() || self.kw > self.padded_w() {
            return Err(Error::Shape(format!(
                "kernel {}x{} larger than padded input {}x{}",
                self.kh,
                self.kw,
                self.padded_h(),
                self.padded_w()
            )));
        }
        Ok(())
    }

    /// Copies `x` (`c_in x h x w`) into the interior of a zeroed padded
    /// buffer.
    pub fn pad_into(&self, x: &[f64], xp: &mut [f64]) {
        let (ph, pw) = (self.padded_h(), self.padded_w());
        xp.fill(0.0);
        for c in 0..self.c_in {
            for i in 0..self.h {
                let src = &x[(c * self.h + i) * self.w..][..self.w];
                xp[(c * ph + i + self.pad_h) * pw + self.pad_w..][..self.w].copy_from_slice(src);
            }
        }
    }

    /// Interior of a padded buffer, i.e. the inverse of [`pad_into`]. Adds
    /// into `x`.
    ///
    /// [`pad_into`]: ConvGeometry::pad_into
    pub fn unpad_accumulate(&self, xp: &[f64], x: &mut [f64]) {
        let (ph, pw) = (self.padded_h(), self.padded_w());
        for c in 0..self.c_in {
            for i in 0..self.h {
                let src = &xp[(c * ph + i + self.pad_h) * pw + self.pad_w..][..self.w];
                let dst = &mut x[(c * self.h + i) * self.w..][..self.w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }

    /// Forward pass over a padded input. Each output element is
    /// `bias + sum over (c, ki, kj)` accumulated in that order.
    pub fn forward_padded(&self, xp: &[f64], filters: &[f64], bias: &[f64], out: &mut [f64]) {
        let (ph, pw) = (self.padded_h(), self.padded_w());
        let (oh, ow) = (self.out_h(), self.out_w());
        for o in 0..self.c_out {
            let out_o = &mut out[o * oh * ow..(o + 1) * oh * ow];
            out_o.fill(bias[o]);
            for c in 0..self.c_in {
                let x_c = &xp[c * ph * pw..(c + 1) * ph * pw];
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let wv = filters[((o * self.c_in + c) * self.kh + ki) * self.kw + kj];
                        for i in 0..oh {
                            let orow = &mut out_o[i * ow..(i + 1) * ow];
                            let irow = &x_c[(i + ki) * pw + kj..][..ow];
                            for (a, &x) in orow.iter_mut().zip(irow) {
                                *a += wv * x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates filter and bias gradients, and the padded-input gradient
    /// when `grad_xp` is given.
    pub fn backward_padded(
        &self,
        xp: &[f64],
        filters: &[f64],
        grad_out: &[f64],
        grad_filters: &mut [f64],
        grad_bias: &mut [f64],
        mut grad_xp: Option<&mut [f64]>,
    ) {
        let (ph, pw) = (self.padded_h(), self.padded_w());
        let (oh, ow) = (self.out_h(), self.out_w());
        for o in 0..self.c_out {
            let g_o = &grad_out[o * oh * ow..(o + 1) * oh * ow];
            grad_bias[o] += g_o.iter().sum::<f64>();
            for c in 0..self.c_in {
                let x_c = &xp[c * ph * pw..(c + 1) * ph * pw];
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let fidx = ((o * self.c_in + c) * self.kh + ki) * self.kw + kj;
                        let mut acc = 0.0;
                        for i in 0..oh {
                            acc += dot(&g_o[i * ow..(i + 1) * ow], &x_c[(i + ki) * pw + kj..][..ow]);
                        }
                        grad_filters[fidx] += acc;
                        if let Some(gx) = grad_xp.as_deref_mut() {
                            let wv = filters[fidx];
                            let gx_c = &mut gx[c * ph * pw..(c + 1) * ph * pw];
                            for i in 0..oh {
                                let dst = &mut gx_c[(i + ki) * pw + kj..][..ow];
                                for (d, &g) in dst.iter_mut().zip(&g_o[i * ow..(i + 1) * ow]) {
                                    *d += wv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry(input: &Tensor, filters: &Tensor, padding: [usize; 2]) -> Result<ConvGeometry> {
    input.expect_rank(3, "conv2d input")?;
    filters.expect_rank(4, "conv2d filters")?;
    let (is, fs) = (input.shape(), filters.shape());
    if fs[1] != is[0] {
        return Err(Error::Shape(format!(
            "filters expect {} input channels, input has {}",
            fs[1], is[0]
        )));
    }
    let g = ConvGeometry {
        c_in: is[0],
        h: is[1],
        w: is[2],
        c_out: fs[0],
        kh: fs[2],
        kw: fs[3],
        pad_h: padding[0],
        pad_w: padding[1],
    };
    g.validate()?;
    Ok(g)
}

/// Stride-1 cross-correlation of a `[C_in, H, W]` input with
/// `[C_out, C_in, kh, kw]` filters after zero-padding by `padding`
/// (rows, columns) on each side.
pub fn conv2d(input: &Tensor, filters: &Tensor, bias: &Tensor, padding: [usize; 2]) -> Result<Tensor> {
    let g = geometry(input, filters, padding)?;
    if bias.shape() != [g.c_out] {
        return Err(Error::Shape(format!(
            "bias shape {:?}, expected [{}]",
            bias.shape(),
            g.c_out
        )));
    }
    let mut xp = vec![0.0; g.padded_len()];
    g.pad_into(input.data(), &mut xp);
    let mut out = vec![0.0; g.output_len()];
    g.forward_padded(&xp, filters.data(), bias.data(), &mut out);
    Tensor::new(vec![g.c_out, g.out_h(), g.out_w()], out)
}

/// Gradients `filters`, `bias` and the input gradient for an upstream
/// gradient shaped like the forward output.
pub fn conv2d_backward(
    input: &Tensor,
    filters: &Tensor,
    padding: [usize; 2],
    grad_out: &Tensor,
) -> Result<LayerGrad> {
    let g = geometry(input, filters, padding)?;
    if grad_out.shape() != [g.c_out, g.out_h(), g.out_w()] {
        return Err(Error::Shape(format!(
            "upstream gradient {:?}, expected [{}, {}, {}]",
            grad_out.shape(),
            g.c_out,
            g.out_h(),
            g.out_w()
        )));
    }
    let mut xp = vec![0.0; g.padded_len()];
    g.pad_into(input.data(), &mut xp);
    let mut gf = vec![0.0; g.filter_len()];
    let mut gb = vec![0.0; g.c_out];
    let mut gxp = vec![0.0; g.padded_len()];
    g.backward_padded(&xp, filters.data(), grad_out.data(), &mut gf, &mut gb, Some(&mut gxp));
    let mut gx = vec![0.0; g.input_len()];
    g.unpad_accumulate(&gxp, &mut gx);
    Ok(LayerGrad {
        params: vec![
            ("filters".into(), Tensor::new(filters.shape().to_vec(), gf)?),
            ("bias".into(), Tensor::new(vec![g.c_out], gb)?),
        ],
        input: Some(Tensor::new(input.shape().to_vec(), gx)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct quadruple loop; out-of-range taps read zero.
    fn reference(x: &Tensor, f: &Tensor, b: &Tensor, pad: [usize; 2]) -> Vec<f64> {
        let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, kh, kw) = (f.shape()[0], f.shape()[2], f.shape()[3]);
        let (oh, ow) = (h + 2 * pad[0] + 1 - kh, w + 2 * pad[1] + 1 - kw);
        let mut out = vec![0.0; c_out * oh * ow];
        for o in 0..c_out {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..c_in {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let (r, s) = ((i + ki) as isize - pad[0] as isize, (j + kj) as isize - pad[1] as isize);
                                let xv = if r >= 0 && s >= 0 && (r as usize) < h && (s as usize) < w {
                                    x.data()[(c * h + r as usize) * w + s as usize]
                                } else {
                                    0.0
                                };
                                acc += xv * f.data()[((o * c_in + c) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out[(o * oh + i) * ow + j] = acc;
                }
            }
        }
        out
    }

    fn loss(x: &Tensor, f: &Tensor, b: &Tensor, pad: [usize; 2], probe: &[f64]) -> f64 {
        conv2d(x, f, b, pad).unwrap().data().iter().zip(probe).map(|(a, p)| a * p).sum()
    }

    #[test]
    fn sum_of_ones() {
        let x = Tensor::new(vec![1, 3, 3], vec![1.0; 9]).unwrap();
        let f = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &f, &Tensor::zeros(&[1]), [0, 0]).unwrap();
        assert_eq!(y.shape(), [1, 1, 1]);
        assert_eq!(y.data(), [9.0]);
    }

    #[test]
    fn delta_kernel_crops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 6, 7], &mut rng);
        let mut f = Tensor::zeros(&[1, 1, 3, 3]);
        f.data_mut()[4] = 1.0;
        let y = conv2d(&x, &f, &Tensor::zeros(&[1]), [0, 0]).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                assert_eq!(y.data()[i * 5 + j], x.data()[(i + 1) * 7 + j + 1]);
            }
        }
    }

    #[test]
    fn matches_reference_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = random(&[2, 8, 8], &mut rng);
        let f = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        for pad in [[0, 0], [1, 2]] {
            let y = conv2d(&x, &f, &b, pad).unwrap();
            let r = reference(&x, &f, &b, pad);
            assert!(y.data().iter().zip(&r).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(&[1, 4, 4]);
        let f = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(matches!(conv2d(&x, &f, &Tensor::zeros(&[1]), [0, 0]), Err(Error::Shape(_))));
        assert!(conv2d(&x, &f, &Tensor::zeros(&[1]), [1, 1]).is_ok());
        let f = Tensor::zeros(&[1, 1, 3, 3]);
        let bad = Tensor::zeros(&[1, 3, 3]);
        assert!(matches!(conv2d_backward(&x, &f, [0, 0], &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 5, 6], &mut rng);
        let f = random(&[2, 2, 3, 2], &mut rng);
        let g = conv2d_backward(&x, &f, [1, 0], &Tensor::zeros(&[2, 5, 5])).unwrap();
        assert!(g.params.iter().all(|(_, t)| t.max_abs() == 0.0));
        assert_eq!(g.input.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn bias_gradient_sums_upstream() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x = random(&[1, 5, 5], &mut rng);
        let f = random(&[2, 1, 2, 2], &mut rng);
        let up = random(&[2, 4, 4], &mut rng);
        let g = conv2d_backward(&x, &f, [0, 0], &up).unwrap();
        for o in 0..2 {
            let s: f64 = up.data()[o * 16..(o + 1) * 16].iter().sum();
            assert!((g.param("bias").unwrap().data()[o] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let eps = 1e-5;
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + seed);
            let pad = [seed as usize % 2, (seed as usize / 2) % 2];
            let x = random(&[2, 5, 6], &mut rng);
            let f = random(&[3, 2, 3, 2], &mut rng);
            let b = random(&[3], &mut rng);
            let out_shape = conv2d(&x, &f, &b, pad).unwrap().shape().to_vec();
            let probe = random(&out_shape, &mut rng);
            let g = conv2d_backward(&x, &f, pad, &probe).unwrap();
            let check = |analytic: &Tensor, which: usize| {
                for idx in 0..analytic.len() {
                    let (mut xp, mut fp, mut bp) = (x.clone(), f.clone(), b.clone());
                    let (mut xm, mut fm, mut bm) = (x.clone(), f.clone(), b.clone());
                    match which {
                        0 => {
                            xp.data_mut()[idx] += eps;
                            xm.data_mut()[idx] -= eps;
                        }
                        1 => {
                            fp.data_mut()[idx] += eps;
                            fm.data_mut()[idx] -= eps;
                        }
                        _ => {
                            bp.data_mut()[idx] += eps;
                            bm.data_mut()[idx] -= eps;
                        }
                    }
                    let numeric = (loss(&xp, &fp, &bp, pad, probe.data()) - loss(&xm, &fm, &bm, pad, probe.data())) / (2.0 * eps);
                    let a = analytic.data()[idx];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                    assert!(rel <= 1e-6, "seed {seed} tensor {which} idx {idx}: {a} vs {numeric}");
                }
            };
            check(g.input.as_ref().unwrap(), 0);
            check(g.param("filters").unwrap(), 1);
            check(g.param("bias").unwrap(), 2);
        }
    }
}
