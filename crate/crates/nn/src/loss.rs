//! Scalar objectives returning the loss together with its input gradient.

use crate::error::{NnError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Mean of `(x - target)²` over all elements.
pub fn mse_to_constant<T: Real>(x: &Tensor<T>, target: T) -> (T, Tensor<T>) {
    let n = T::from_usize(x.len().max(1)).unwrap();
    let loss = x.data().iter().map(|&v| (v - target) * (v - target)).sum::<T>() / n;
    let two = T::lit(2.0);
    let grad = x.map(|v| two * (v - target) / n);
    (loss, grad)
}

/// Mean absolute difference; gradient is taken with respect to `a`.
pub fn l1<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if a.shape() != b.shape() {
        return Err(NnError::Shape {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    let n = T::from_usize(a.len().max(1)).unwrap();
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(a.len());
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        loss = loss + d.abs();
        grad.push(if d > T::zero() {
            n.recip()
        } else if d < T::zero() {
            -n.recip()
        } else {
            T::zero()
        });
    }
    Ok((loss / n, Tensor::from_vec(a.shape(), grad)?))
}

/// Row-wise softmax of `[batch, classes]` logits.
pub fn softmax<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

/// Mean cross-entropy of `[batch, classes]` logits against integer labels.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], classes: usize, labels: &[usize]) -> Result<(T, Vec<T>)> {
    if logits.len() != labels.len() * classes {
        return Err(NnError::Invalid(format!(
            "{} logits do not match {} labels over {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::Invalid(format!("label {bad} outside {classes} classes")));
    }
    let batch = T::from_usize(labels.len().max(1)).unwrap();
    let mut grad = softmax(logits, classes);
    let mut loss = T::zero();
    for (row, &label) in grad.chunks_mut(classes).zip(labels) {
        loss = loss - row[label].max(T::min_positive_value()).ln();
        row[label] = row[label] - T::one();
        for g in row.iter_mut() {
            *g = *g / batch;
        }
    }
    Ok((loss / batch, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_values() {
        let ones = Tensor::<f64>::full(&[1, 1, 2, 2], 1.0);
        assert_eq!(mse_to_constant(&ones, 1.0).0, 0.0);
        assert_eq!(mse_to_constant(&Tensor::<f64>::zeros(&[4]), 1.0).0, 1.0);
        let half = Tensor::<f64>::full(&[2], 0.5);
        assert_eq!(mse_to_constant(&half, 0.0).0, 0.25);
    }

    #[test]
    fn l1_rejects_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 2]);
        let b = Tensor::<f32>::zeros(&[4]);
        assert!(l1(&a, &b).is_err());
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero() {
        let logits = [1.0f64, 2.0, 0.5, -1.0, 0.0, 3.0];
        let (loss, grad) = softmax_cross_entropy(&logits, 3, &[1, 2]).unwrap();
        assert!(loss > 0.0);
        for row in grad.chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
