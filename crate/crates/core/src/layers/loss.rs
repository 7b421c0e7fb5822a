use crate::tensor::{Real, Tensor};

use super::LayerError;

/// Mean squared error over every element, with its gradient `2(pred - target)/count`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>), LayerError> {
    if pred.shape() != target.shape() {
        return Err(LayerError::ShapeMismatch { expected: target.shape(), got: pred.shape() });
    }
    let count = pred.len() as f64;
    let mut sum = 0.0f64;
    let scale = T::from_f64_lossy(2.0 / count);
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok((T::from_f64_lossy(sum / count), grad))
}

/// Softmax cross-entropy over the channel axis, each pixel weighted by its true class's
/// weight and normalized by the total weight.
///
/// `labels` holds one class index per `(n, h, w)` pixel in row-major order.
pub fn weighted_softmax_ce_loss<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
    class_weights: &[T],
) -> Result<(T, Tensor<T>), LayerError> {
    let [n, q, h, w] = logits.shape();
    let hw = h * w;
    if labels.len() != n * hw {
        return Err(LayerError::BadParams(format!("{} labels for {} pixels", labels.len(), n * hw)));
    }
    if class_weights.len() != q {
        return Err(LayerError::BadParams(format!("{} class weights for {q} classes", class_weights.len())));
    }
    if class_weights.iter().any(|&v| !(v > T::zero())) {
        return Err(LayerError::BadParams("class weights must be positive".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= q) {
        return Err(LayerError::LabelOutOfRange { label: bad, classes: q });
    }
    let total_weight: f64 = labels.iter().map(|&l| class_weights[l].as_f64()).sum();
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0f64;
    let mut probs = vec![0.0f64; q];
    for b in 0..n {
        let z = logits.sample(b);
        let g = grad.sample_mut(b);
        for p in 0..hw {
            let label = labels[b * hw + p];
            let max = (0..q).map(|k| z[k * hw + p].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (k, pr) in probs.iter_mut().enumerate() {
                *pr = (z[k * hw + p].as_f64() - max).exp();
                denom += *pr;
            }
            let wgt = class_weights[label].as_f64() / total_weight;
            loss += wgt * (denom.ln() - (z[label * hw + p].as_f64() - max));
            for (k, &pr) in probs.iter().enumerate() {
                let onehot = if k == label { 1.0 } else { 0.0 };
                g[k * hw + p] = T::from_f64_lossy(wgt * (pr / denom - onehot));
            }
        }
    }
    Ok((T::from_f64_lossy(loss), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_basics() {
        let a = Tensor::from_fn([2, 1, 3, 3], |[n, _, y, x]| (n + y * x) as f64);
        let (l, g) = mse_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let b = a.map(|v| v - 1.0);
        let (l, g) = mse_loss(&a, &b).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.data().iter().all(|&v| (v - 2.0 / 18.0).abs() < 1e-15));
        let c = Tensor::<f64>::zeros([1, 1, 3, 3]);
        assert!(mse_loss(&a, &c).is_err());
    }

    #[test]
    fn uniform_logits_give_log_q() {
        let q = 7;
        let z = Tensor::<f64>::zeros([2, q, 2, 3]);
        let labels: Vec<usize> = (0..12).map(|i| i % q).collect();
        let (l, _) = weighted_softmax_ce_loss(&z, &labels, &vec![1.0; q]).unwrap();
        assert!((l - (q as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let q = 4;
        let labels = vec![2usize; 4];
        let mut prev = f64::INFINITY;
        for &big in &[1.0, 10.0, 50.0, 500.0] {
            let z = Tensor::from_fn([1, q, 2, 2], |[_, k, _, _]| if k == 2 { big } else { 0.0 });
            let (l, _) = weighted_softmax_ce_loss(&z, &labels, &[1.0; 4]).unwrap();
            assert!(l <= prev);
            prev = l;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn weights_reweight_pixels() {
        // Two pixels; pixel 0 label 0 confidently right, pixel 1 label 1 uniform.
        let z = Tensor::from_vec([1, 2, 1, 2], vec![100.0f64, 0.0, 0.0, 0.0]).unwrap();
        let (l, _) = weighted_softmax_ce_loss(&z, &[0, 1], &[1.0, 3.0]).unwrap();
        assert!((l - 0.75 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_labels() {
        let z = Tensor::<f64>::zeros([1, 3, 1, 2]);
        assert_eq!(
            weighted_softmax_ce_loss(&z, &[0, 3], &[1.0; 3]).unwrap_err(),
            LayerError::LabelOutOfRange { label: 3, classes: 3 }
        );
        assert!(weighted_softmax_ce_loss(&z, &[0, 1], &[1.0, 0.0, 1.0]).is_err());
    }
}
