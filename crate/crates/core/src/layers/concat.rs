use crate::tensor::{Real, Tensor};

use super::LayerError;

/// Stacks tensors along the channel axis, preserving order.
pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Result<Tensor<T>, LayerError> {
    let first = xs.first().ok_or_else(|| LayerError::BadParams("concat of zero tensors".into()))?;
    let [n, _, h, w] = first.shape();
    for x in xs {
        let [xn, _, xh, xw] = x.shape();
        if (xn, xh, xw) != (n, h, w) {
            return Err(LayerError::ShapeMismatch { expected: [n, x.c(), h, w], got: x.shape() });
        }
    }
    let total: usize = xs.iter().map(|x| x.c()).sum();
    let mut data = Vec::with_capacity(n * total * h * w);
    for b in 0..n {
        for x in xs {
            data.extend_from_slice(x.sample(b));
        }
    }
    Ok(Tensor::from_vec([n, total, h, w], data).expect("shape computed from inputs"))
}

/// Gradient of [`concat_channels`]: slices `dy` back into per-input channel blocks.
pub fn split_channels<T: Real>(dy: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>, LayerError> {
    let [n, c, h, w] = dy.shape();
    if channels.iter().sum::<usize>() != c || channels.contains(&0) {
        return Err(LayerError::BadParams(format!("cannot split {c} channels into {channels:?}")));
    }
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&k| Vec::with_capacity(n * k * h * w)).collect();
    for b in 0..n {
        let mut rest = dy.sample(b);
        for (part, &k) in parts.iter_mut().zip(channels) {
            let (head, tail) = rest.split_at(k * h * w);
            part.extend_from_slice(head);
            rest = tail;
        }
    }
    Ok(parts
        .into_iter()
        .zip(channels)
        .map(|(d, &k)| Tensor::from_vec([n, k, h, w], d).expect("split shapes"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_add_and_round_trip() {
        let a = Tensor::from_fn([2, 3, 4, 4], |[n, c, y, x]| (n * 100 + c * 10 + y + x) as f64);
        let b = Tensor::from_fn([2, 5, 4, 4], |[n, c, y, x]| -((n * 100 + c * 10 + y * x) as f64));
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), [2, 8, 4, 4]);
        assert_eq!(cat[[1, 4, 2, 3]], b[[1, 1, 2, 3]]);
        let parts = split_channels(&cat, &[3, 5]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn single_input_is_identity() {
        let a = Tensor::from_fn([1, 2, 3, 3], |[_, c, y, x]| (c + y * x) as f32);
        assert_eq!(concat_channels(&[&a]).unwrap(), a);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let b = Tensor::<f32>::zeros([1, 2, 4, 2]);
        assert!(matches!(concat_channels(&[&a, &b]), Err(LayerError::ShapeMismatch { .. })));
        let b = Tensor::<f32>::zeros([2, 2, 4, 4]);
        assert!(concat_channels(&[&a, &b]).is_err());
    }
}
