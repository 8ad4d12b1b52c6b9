use crate::error::{Error, Result};

use super::{softmax_rows, Scalar, Tensor};

/// Probabilities are clamped to this distance from 0 and 1 before logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Minimized binary cross-entropy `-(a ln p + (1-a) ln(1-p))`.
pub fn binary_cross_entropy(p: f64, positive: bool) -> f64 {
    let p = clamp_prob(p);
    if positive {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `-ln p[class]` for one probability vector.
pub fn categorical_cross_entropy<T: Scalar>(probs: &[T], class: usize) -> Result<f64> {
    let p = probs
        .get(class)
        .ok_or_else(|| Error::Usage(format!("class {class} outside {} outcomes", probs.len())))?;
    Ok(-clamp_prob(p.as_f64()).ln())
}

/// Mean softmax cross-entropy of a `[batch, k]` logit matrix and the
/// gradient of that mean w.r.t. the logits, `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let batch = logits.batch();
    if labels.len() != batch || batch == 0 {
        return Err(Error::Usage(format!("{} labels for a batch of {batch}", labels.len())));
    }
    let k = logits.row_len();
    let mut probs = softmax_rows(logits);
    let inv = T::of(1.0 / batch as f64);
    let mut total = 0.0;
    for (row, &label) in probs.data_mut().chunks_mut(k).zip(labels) {
        total += categorical_cross_entropy(row, label)?;
        row[label] -= T::one();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok((total / batch as f64, probs))
}
