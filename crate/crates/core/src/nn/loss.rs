use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Numerically stable softmax (max-subtracted). Rejects non-finite logits.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>, NnError> {
    if let Some(index) = logits.iter().position(|v| !v.is_finite()) {
        return Err(NnError::NonFinite { index });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Row-wise softmax of an `N×k` logit tensor.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let n = logits.shape()[0];
    let mut out = Vec::with_capacity(logits.len());
    for i in 0..n {
        out.extend(softmax(logits.outer(i))?);
    }
    Ok(Tensor::from_vec(logits.shape(), out).expect("same shape"))
}

/// Mean cross-entropy over a batch and its gradient with respect to the
/// logits (`(softmax − onehot) / N`).
pub fn cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>), NnError> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    assert_eq!(labels.len(), n, "one label per row");
    let probs = softmax_rows(logits)?;
    let inv_n = T::one() / T::from_f64_lossy(n as f64);
    let floor = T::from_f64_lossy(1e-12);
    let mut grad = probs.clone().into_values();
    let mut loss = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(NnError::LabelOutOfRange { label, classes: k });
        }
        loss -= probs.outer(i)[label].max(floor).ln();
        grad[i * k + label] -= T::one();
    }
    for g in &mut grad {
        *g *= inv_n;
    }
    Ok((loss * inv_n, Tensor::from_vec(&[n, k], grad).expect("shape")))
}
