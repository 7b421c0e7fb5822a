//! Fixed 2× bilinear upsampling (half-pixel centers, edge clamped).

use crate::tensor::{Real, Tensor};

/// Source taps for one output coordinate: `(i0, i1, w0, w1)`.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

pub fn bilinear_upsample2x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let ty = taps(oh, h);
    let tx = taps(ow, w);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for (src, dst) in x.data().chunks_exact(h * w).zip(y.data_mut().chunks_exact_mut(oh * ow)) {
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64_lossy(wy0), T::from_f64_lossy(wy1));
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64_lossy(wx0), T::from_f64_lossy(wx1));
                dst[oy * ow + ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    y
}

/// Adjoint of [`bilinear_upsample2x`].
pub fn bilinear_upsample2x_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, oh, ow] = dy.shape();
    assert!(oh % 2 == 0 && ow % 2 == 0, "upsampled gradient must have even dims");
    let (h, w) = (oh / 2, ow / 2);
    let ty = taps(oh, h);
    let tx = taps(ow, w);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for (g, dst) in dy.data().chunks_exact(oh * ow).zip(dx.data_mut().chunks_exact_mut(h * w)) {
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f64_lossy(wy0), T::from_f64_lossy(wy1));
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::from_f64_lossy(wx0), T::from_f64_lossy(wx1));
                let v = g[oy * ow + ox];
                dst[y0 * w + x0] += wy0 * wx0 * v;
                dst[y0 * w + x1] += wy0 * wx1 * v;
                dst[y1 * w + x0] += wy1 * wx0 * v;
                dst[y1 * w + x1] += wy1 * wx1 * v;
            }
        }
    }
    dx
}
