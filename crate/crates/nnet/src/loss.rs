use crate::{Real, Tensor};

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape(), "mse shape mismatch");
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            sum += d * d;
            T::from_f64_lossy(2.0 * d / n)
        })
        .collect();
    (sum / n, Tensor::from_vec(pred.shape(), grad))
}

/// Cross-entropy of `softmax(logits)` against class `target`; returns the
/// loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], target: usize) -> (f64, Vec<T>) {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v.as_f64()));
    let exps: Vec<f64> = logits.iter().map(|&v| (v.as_f64() - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = -(exps[target] / z).ln();
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| T::from_f64_lossy(e / z - if i == target { 1.0 } else { 0.0 }))
        .collect();
    (loss, grad)
}
