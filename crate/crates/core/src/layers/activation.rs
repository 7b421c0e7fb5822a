use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where `x > 0`. The subgradient at exactly zero is zero.
pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    assert_eq!(x.shape(), dy.shape());
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::from_vec([1, 1, 1, 3], vec![0.5f64, 1.0, 2.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn gradient_mask() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![-1.0f64, 0.0, 2.0, 1e-300]).unwrap();
        let dy = Tensor::full([1, 1, 1, 4], 3.0);
        assert_eq!(relu_backward(&x, &dy).data(), &[0.0, 0.0, 3.0, 3.0]);
    }
}
