use super::Tensor;
use crate::error::{Error, Result};

/// Numerically stable softmax; returns `ln(sum(exp(l - max)))` and the max.
pub fn softmax_into(logits: &[f64], probs: &mut [f64]) -> (f64, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    (sum.ln(), max)
}

/// Softmax cross-entropy: `-ln p[target]` and the probabilities.
pub fn softmax_xent(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    logits.expect_rank(1, "logits")?;
    let k = logits.len();
    if k < 2 {
        return Err(Error::Shape(format!("need at least 2 classes, got {k}")));
    }
    if target >= k {
        return Err(Error::Index { index: target, len: k });
    }
    let mut probs = vec![0.0; k];
    let (log_sum, max) = softmax_into(logits.data(), &mut probs);
    let loss = log_sum - (logits.data()[target] - max);
    Ok((loss, Tensor::new(vec![k], probs)?))
}

/// Gradient of the cross-entropy w.r.t. the logits: `probs - onehot(target)`.
pub fn softmax_xent_backward(probs: &Tensor, target: usize) -> Result<Tensor> {
    if target >= probs.len() {
        return Err(Error::Index {
            index: target,
            len: probs.len(),
        });
    }
    let mut g = probs.clone();
    g.data_mut()[target] -= 1.0;
    Ok(g)
}
