//! 2×2 max pooling with recorded switches, and switch-guided unpooling.

use crate::tensor::{Real, Tensor};

use super::LayerError;

/// Argmax location of every pooled element, as a row-major offset (0..4) in its 2×2 window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSwitches {
    shape: [usize; 4],
    offsets: Vec<u8>,
}

impl PoolSwitches {
    pub fn new(shape: [usize; 4], offsets: Vec<u8>) -> Result<Self, LayerError> {
        if offsets.len() != shape.iter().product::<usize>() {
            return Err(LayerError::BadParams(format!("{} switch offsets for pooled shape {shape:?}", offsets.len())));
        }
        if offsets.iter().any(|&o| o >= 4) {
            return Err(LayerError::BadParams("switch offset outside its 2x2 window".into()));
        }
        Ok(Self { shape, offsets })
    }

    /// Shape of the pooled tensor these switches belong to.
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn offsets(&self) -> &[u8] {
        &self.offsets
    }

    /// Source `(y, x)` in the unpooled grid for pooled element `(y, x)`.
    #[inline]
    fn source(&self, i: usize, y: usize, x: usize) -> (usize, usize) {
        let o = self.offsets[i] as usize;
        (2 * y + o / 2, 2 * x + o % 2)
    }
}

/// 2×2, stride 2 max pooling. Ties resolve to the first maximum in row-major window order.
pub fn maxpool2d<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolSwitches), LayerError> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(LayerError::OddSpatial { h, w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut offsets = Vec::with_capacity(n * c * oh * ow);
    let out = y.data_mut();
    let mut i = 0;
    for plane in x.data().chunks_exact(h * w) {
        for py in 0..oh {
            let r0 = &plane[2 * py * w..(2 * py + 1) * w];
            let r1 = &plane[(2 * py + 1) * w..(2 * py + 2) * w];
            for px in 0..ow {
                let window = [r0[2 * px], r0[2 * px + 1], r1[2 * px], r1[2 * px + 1]];
                let mut best = 0u8;
                for k in 1..4u8 {
                    if window[k as usize] > window[best as usize] {
                        best = k;
                    }
                }
                out[i] = window[best as usize];
                offsets.push(best);
                i += 1;
            }
        }
    }
    Ok((y, PoolSwitches { shape: [n, c, oh, ow], offsets }))
}

/// Gradient of [`maxpool2d`]: routes each pooled gradient to its argmax.
pub fn maxpool2d_backward<T: Real>(
    dy: &Tensor<T>,
    switches: &PoolSwitches,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor<T>, LayerError> {
    maxunpool2d(dy, switches, in_h, in_w)
}

/// Scatters `y` to the switch locations of a `out_h × out_w` grid; zeros elsewhere.
pub fn maxunpool2d<T: Real>(
    y: &Tensor<T>,
    s: &PoolSwitches,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>, LayerError> {
    if y.shape() != s.shape {
        return Err(LayerError::ShapeMismatch { expected: s.shape, got: y.shape() });
    }
    let [n, c, h, w] = y.shape();
    if !(2 * h..=2 * h + 1).contains(&out_h) || !(2 * w..=2 * w + 1).contains(&out_w) {
        return Err(LayerError::BadParams(format!("unpool target {out_h}x{out_w} incompatible with pooled {h}x{w}")));
    }
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let dst = out.data_mut();
    let mut i = 0;
    for (p, plane) in y.data().chunks_exact(h * w).enumerate() {
        let base = p * out_h * out_w;
        for py in 0..h {
            for px in 0..w {
                let (sy, sx) = s.source(i, py, px);
                dst[base + sy * out_w + sx] = plane[py * w + px];
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Gradient of [`maxunpool2d`]: gathers from the switch locations.
pub fn maxunpool2d_backward<T: Real>(dx: &Tensor<T>, s: &PoolSwitches) -> Result<Tensor<T>, LayerError> {
    let [n, c, h, w] = s.shape;
    let [dn, dc, out_h, out_w] = dx.shape();
    if dn != n || dc != c || !(2 * h..=2 * h + 1).contains(&out_h) || !(2 * w..=2 * w + 1).contains(&out_w) {
        return Err(LayerError::ShapeMismatch { expected: [n, c, 2 * h, 2 * w], got: dx.shape() });
    }
    let mut dy = Tensor::zeros(s.shape);
    let out = dy.data_mut();
    let mut i = 0;
    for plane in dx.data().chunks_exact(out_h * out_w) {
        for py in 0..h {
            for px in 0..w {
                let (sy, sx) = s.source(i, py, px);
                out[i] = plane[sy * out_w + sx];
                i += 1;
            }
        }
    }
    Ok(dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn picks_window_max() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, s) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(s.offsets(), &[3]);
        let up = maxunpool2d(&y, &s, 2, 2).unwrap();
        assert_eq!(up.data(), &[0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn ties_pick_first_in_row_major_order() {
        let x = Tensor::full([2, 3, 4, 6], 7.0f64);
        let (y, s) = maxpool2d(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert!(s.offsets().iter().all(|&o| o == 0));
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 3, 4]);
        assert_eq!(maxpool2d(&x).unwrap_err(), LayerError::OddSpatial { h: 3, w: 4 });
    }

    #[test]
    fn unpool_shape_mismatch() {
        let x = Tensor::<f32>::zeros([1, 1, 4, 4]);
        let (_, s) = maxpool2d(&x).unwrap();
        let y = Tensor::<f32>::zeros([1, 2, 2, 2]);
        assert!(matches!(maxunpool2d(&y, &s, 4, 4), Err(LayerError::ShapeMismatch { .. })));
        assert!(PoolSwitches::new([1, 1, 1, 1], vec![4]).is_err());
    }

    #[test]
    fn unpool_adjoint_of_gather() {
        let x = Tensor::from_fn([1, 2, 4, 4], |[_, c, y, x]| ((c * 7 + y * 5 + x * 3) % 11) as f64);
        let (y, s) = maxpool2d(&x).unwrap();
        let r = Tensor::from_fn([1, 2, 4, 4], |[_, c, y, x]| (c + y * x) as f64 - 3.0);
        let lhs = maxunpool2d(&y, &s, 4, 4).unwrap().dot(&r);
        let rhs = y.dot(&maxunpool2d_backward(&r, &s).unwrap());
        assert_eq!(lhs, rhs);
    }

    proptest! {
        #[test]
        fn pool_of_unpool_is_identity(
            vals in proptest::collection::vec(-100.0f64..100.0, 2 * 3 * 3),
            offs in proptest::collection::vec(0u8..4, 2 * 3 * 3),
        ) {
            let y = Tensor::from_vec([1, 2, 3, 3], vals.iter().map(|v| v.abs() + 1.0).collect()).unwrap();
            let s = PoolSwitches::new([1, 2, 3, 3], offs).unwrap();
            let up = maxunpool2d(&y, &s, 6, 6).unwrap();
            let (back, s2) = maxpool2d(&up).unwrap();
            prop_assert_eq!(&back, &y);
            prop_assert_eq!(&s2, &s);
            // one nonzero per window
            for plane in up.data().chunks_exact(36) {
                for wy in 0..3 {
                    for wx in 0..3 {
                        let nz = [(0, 0), (0, 1), (1, 0), (1, 1)]
                            .iter()
                            .filter(|(dy, dx)| plane[(2 * wy + dy) * 6 + 2 * wx + dx] != 0.0)
                            .count();
                        prop_assert_eq!(nz, 1);
                    }
                }
            }
        }

        #[test]
        fn unpool_of_pool_keeps_window_max(vals in proptest::collection::vec(-10.0f64..10.0, 4 * 4)) {
            let x = Tensor::from_vec([1, 1, 4, 4], vals).unwrap();
            let (y, s) = maxpool2d(&x).unwrap();
            let up = maxunpool2d(&y, &s, 4, 4).unwrap();
            for (i, &v) in up.data().iter().enumerate() {
                let (yy, xx) = (i / 4, i % 4);
                let m = y[[0, 0, yy / 2, xx / 2]];
                let o = s.offsets()[(yy / 2) * 2 + xx / 2] as usize;
                if (yy % 2) * 2 + xx % 2 == o {
                    prop_assert_eq!(v, m);
                    prop_assert_eq!(x.data()[i], m);
                } else {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }
}
