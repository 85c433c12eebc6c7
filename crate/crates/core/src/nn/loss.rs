use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of a `B×K` tensor using the max-shift for stability.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let k = match *logits.shape() {
        [_, k] if k > 0 => k,
        _ => return Err(Error::dims("softmax", logits.shape(), &[])),
    };
    let mut p = logits.clone();
    for row in p.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(p)
}

#[derive(Debug)]
pub struct SoftmaxXent<T: Scalar> {
    /// Mean negative log-likelihood over the batch.
    pub loss: T,
    pub probs: Tensor<T>,
    /// `(p − onehot) / B`.
    pub grad: Tensor<T>,
}

pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<SoftmaxXent<T>> {
    let (b, k) = match *logits.shape() {
        [b, k] if k > 0 => (b, k),
        _ => return Err(Error::dims("softmax_cross_entropy", logits.shape(), &[labels.len()])),
    };
    if labels.len() != b {
        return Err(Error::dims("softmax_cross_entropy labels", logits.shape(), &[labels.len()]));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Label { index, label });
    }
    let probs = softmax_rows(logits)?;
    let inv_b = T::one() / T::of(b as f64);
    let mut loss = T::zero();
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss += lse - (row[y] - m);
    }
    let mut grad = probs.clone();
    for (row, &y) in grad.data_mut().chunks_mut(k).zip(labels) {
        row[y] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv_b);
    }
    Ok(SoftmaxXent {
        loss: loss * inv_b,
        probs,
        grad,
    })
}
