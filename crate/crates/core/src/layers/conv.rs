//! Convolution and transposed convolution via im2col/col2im and a dense matrix product.
//!
//! For a sample with `C` channels the column buffer has `C·kh·kw` rows and one column
//! per output location. Transposed convolution reuses the same buffer layout with the
//! roles of input and output swapped, which makes it the exact adjoint of [`conv2d`].

use crate::tensor::{matmul, Real, Tensor};

use super::LayerError;

/// Weight and bias of a convolution or transposed convolution.
///
/// For [`conv2d`] the weight is `(out_c, in_c, kh, kw)`; for [`deconv2d`] it is
/// `(in_c, out_c, kh, kw)`. The bias always has one entry per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros_conv(in_c: usize, out_c: usize, kh: usize, kw: usize) -> Self {
        Self { weight: Tensor::zeros([out_c, in_c, kh, kw]), bias: vec![T::zero(); out_c] }
    }

    pub fn zeros_deconv(in_c: usize, out_c: usize, kh: usize, kw: usize) -> Self {
        Self { weight: Tensor::zeros([in_c, out_c, kh, kw]), bias: vec![T::zero(); out_c] }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.h(), self.weight.w())
    }
}

/// Output extent of a convolution along one axis, or `None` if the kernel does not fit.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn deconv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (input.checked_sub(1)?) * stride + kernel;
    full.checked_sub(2 * pad).filter(|&d| d > 0)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Range of output columns `ox` for which `ox*stride + kx - pad` lands in `[0, w)`.
    #[inline]
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        // smallest o with o*s + k >= pad
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        // largest o with o*s + k - pad < extent  <=>  o*s < extent + pad - k
        let lim = extent + self.pad;
        let hi = if lim <= k { 0 } else { ((lim - k - 1) / s + 1).min(out) };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Real>(img: &[T], g: &Geometry, cols: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if oy < oy_lo || oy >= oy_hi || ox_lo >= ox_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    line[..ox_lo].fill(T::zero());
                    line[ox_hi..].fill(T::zero());
                    if g.stride == 1 {
                        let x0 = ox_lo + kx - g.pad;
                        line[ox_lo..ox_hi].copy_from_slice(&src[x0..x0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            line[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a zeroed image.
fn col2im<T: Real>(cols: &[T], g: &Geometry, img: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in ox_lo..ox_hi {
                        dst[ox * g.stride + kx - g.pad] += line[ox];
                    }
                }
            }
        }
    }
}

fn conv_geometry<T: Real>(
    x_shape: [usize; 4],
    p: &ConvParams<T>,
    stride: usize,
    pad: usize,
) -> Result<Geometry, LayerError> {
    let [_, c, h, w] = x_shape;
    let [out_c, in_c, kh, kw] = p.weight.shape();
    if stride == 0 {
        return Err(LayerError::InvalidStride);
    }
    if c != in_c {
        return Err(LayerError::ChannelMismatch { expected: in_c, got: c });
    }
    if p.bias.len() != out_c {
        return Err(LayerError::BadParams(format!("bias length {} for {} output channels", p.bias.len(), out_c)));
    }
    let (Some(oh), Some(ow)) = (conv_out_dim(h, kh, stride, pad), conv_out_dim(w, kw, stride, pad)) else {
        return Err(LayerError::KernelTooLarge { kernel: (kh, kw), padded: (h + 2 * pad, w + 2 * pad) });
    };
    Ok(Geometry { channels: c, h, w, kh, kw, stride, pad, oh, ow })
}

/// Zero-padded cross-correlation plus bias.
pub fn conv2d<T: Real>(x: &Tensor<T>, p: &ConvParams<T>, stride: usize, pad: usize) -> Result<Tensor<T>, LayerError> {
    let g = conv_geometry(x.shape(), p, stride, pad)?;
    let out_c = p.weight.n();
    let mut y = Tensor::zeros([x.n(), out_c, g.oh, g.ow]);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for n in 0..x.n() {
        im2col(x.sample(n), &g, &mut cols);
        let out = y.sample_mut(n);
        matmul(out_c, g.rows(), g.cols(), p.weight.data(), false, &cols, false, T::zero(), out);
        for (plane, &b) in out.chunks_exact_mut(g.cols()).zip(&p.bias) {
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    debug_assert!(!cannot_overflow(x, p) || !y.has_nan(), "conv2d produced NaN without overflow");
    Ok(y)
}

/// True when finite operands bound every output sum below the type's maximum. Diverging
/// weights can overflow to inf - inf = NaN, which training reports as a non-finite loss.
fn cannot_overflow<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> bool {
    let max_abs = |v: &[T]| v.iter().fold(0.0f64, |m, t| m.max(t.as_f64().abs()));
    let bound = max_abs(x.data()) * max_abs(p.weight.data()) * p.weight.len() as f64 + max_abs(&p.bias);
    x.is_finite() && p.is_finite() && bound < T::max_value().as_f64()
}

/// Gradients of a layer with [`ConvParams`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>, LayerError> {
    let g = conv_geometry(x.shape(), p, stride, pad)?;
    let out_c = p.weight.n();
    let expected = [x.n(), out_c, g.oh, g.ow];
    if dy.shape() != expected {
        return Err(LayerError::ShapeMismatch { expected, got: dy.shape() });
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(p.weight.shape());
    let mut db = vec![T::zero(); out_c];
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    let mut dcols = vec![T::zero(); g.rows() * g.cols()];
    for n in 0..x.n() {
        let dy_n = dy.sample(n);
        im2col(x.sample(n), &g, &mut cols);
        matmul(out_c, g.cols(), g.rows(), dy_n, false, &cols, true, T::one(), dw.data_mut());
        matmul(g.rows(), out_c, g.cols(), p.weight.data(), true, dy_n, false, T::zero(), &mut dcols);
        col2im(&dcols, &g, dx.sample_mut(n));
        for (b, plane) in db.iter_mut().zip(dy_n.chunks_exact(g.cols())) {
            *b += plane.iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

fn deconv_geometry<T: Real>(
    x_shape: [usize; 4],
    p: &ConvParams<T>,
    stride: usize,
    pad: usize,
) -> Result<Geometry, LayerError> {
    let [_, c, h, w] = x_shape;
    let [in_c, out_c, kh, kw] = p.weight.shape();
    if stride == 0 {
        return Err(LayerError::InvalidStride);
    }
    if c != in_c {
        return Err(LayerError::ChannelMismatch { expected: in_c, got: c });
    }
    if p.bias.len() != out_c {
        return Err(LayerError::BadParams(format!("bias length {} for {} output channels", p.bias.len(), out_c)));
    }
    let (Some(oh), Some(ow)) = (deconv_out_dim(h, kh, stride, pad), deconv_out_dim(w, kw, stride, pad)) else {
        return Err(LayerError::EmptyOutput);
    };
    // The geometry describes the forward convolution from the deconv output back to its input.
    Ok(Geometry { channels: out_c, h: oh, w: ow, kh, kw, stride, pad, oh: h, ow: w })
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same weight tensor, plus bias.
pub fn deconv2d<T: Real>(x: &Tensor<T>, p: &ConvParams<T>, stride: usize, pad: usize) -> Result<Tensor<T>, LayerError> {
    let g = deconv_geometry(x.shape(), p, stride, pad)?;
    let in_c = x.c();
    let mut y = Tensor::zeros([x.n(), g.channels, g.h, g.w]);
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    for n in 0..x.n() {
        matmul(g.rows(), in_c, g.cols(), p.weight.data(), true, x.sample(n), false, T::zero(), &mut cols);
        let out = y.sample_mut(n);
        col2im(&cols, &g, out);
        for (plane, &b) in out.chunks_exact_mut(g.h * g.w).zip(&p.bias) {
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    debug_assert!(!cannot_overflow(x, p) || !y.has_nan(), "deconv2d produced NaN without overflow");
    Ok(y)
}

pub fn deconv2d_backward<T: Real>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    stride: usize,
    pad: usize,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>, LayerError> {
    let g = deconv_geometry(x.shape(), p, stride, pad)?;
    let expected = [x.n(), g.channels, g.h, g.w];
    if dy.shape() != expected {
        return Err(LayerError::ShapeMismatch { expected, got: dy.shape() });
    }
    let in_c = x.c();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(p.weight.shape());
    let mut db = vec![T::zero(); g.channels];
    let mut dcols = vec![T::zero(); g.rows() * g.cols()];
    for n in 0..x.n() {
        let dy_n = dy.sample(n);
        im2col(dy_n, &g, &mut dcols);
        matmul(in_c, g.rows(), g.cols(), p.weight.data(), false, &dcols, false, T::zero(), dx.sample_mut(n));
        matmul(in_c, g.cols(), g.rows(), x.sample(n), false, &dcols, true, T::one(), dw.data_mut());
        for (b, plane) in db.iter_mut().zip(dy_n.chunks_exact(g.h * g.w)) {
            *b += plane.iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct six-deep loop, independent of the im2col path.
    fn conv_oracle(x: &Tensor<f64>, p: &ConvParams<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [n, c, h, w] = x.shape();
        let [o, _, kh, kw] = p.weight.shape();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Tensor::from_fn([n, o, oh, ow], |[b, oc, oy, ox]| {
            let mut acc = p.bias[oc];
            for ic in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += x[[b, ic, iy as usize, ix as usize]] * p.weight[[oc, ic, ky, kx]];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Tensor::full([1, 1, 3, 3], 1.0f64);
        let p = ConvParams { weight: Tensor::full([1, 1, 3, 3], 1.0), bias: vec![0.0] };
        let y = conv2d(&x, &p, 1, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([2, 1, 5, 4], &mut rng);
        let p = ConvParams { weight: Tensor::full([1, 1, 1, 1], 1.0), bias: vec![0.0] };
        assert_eq!(conv2d(&x, &p, 1, 0).unwrap(), x);
    }

    #[test]
    fn matches_oracle_with_strides_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 3), (2, 2, 5), (3, 0, 2), (1, 4, 9)] {
            let x = random([2, 3, 8, 8], &mut rng);
            let mut p = ConvParams { weight: random([4, 3, k, k], &mut rng), bias: vec![0.0; 4] };
            p.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
            let y = conv2d(&x, &p, stride, pad).unwrap();
            let oracle = conv_oracle(&x, &p, stride, pad);
            assert_eq!(y.shape(), oracle.shape());
            assert!(y.max_abs_diff(&oracle) < 1e-12, "stride {stride} pad {pad} k {k}");
        }
    }

    #[test]
    fn conv_errors() {
        let x = Tensor::<f64>::zeros([1, 2, 3, 3]);
        let p = ConvParams::<f64>::zeros_conv(3, 1, 3, 3);
        assert_eq!(conv2d(&x, &p, 1, 1), Err(LayerError::ChannelMismatch { expected: 3, got: 2 }));
        let p = ConvParams::<f64>::zeros_conv(2, 1, 5, 5);
        assert!(matches!(conv2d(&x, &p, 1, 0), Err(LayerError::KernelTooLarge { .. })));
        assert_eq!(conv2d(&x, &p, 0, 2), Err(LayerError::InvalidStride));
    }

    #[test]
    fn deconv_delta_reproduces_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::full([1, 1, 1, 1], 1.0f64);
        let p = ConvParams { weight: random([1, 1, 3, 3], &mut rng), bias: vec![0.0] };
        let y = deconv2d(&x, &p, 1, 0).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert_eq!(y.data(), p.weight.data());
    }

    #[test]
    fn deconv_shapes() {
        let p = ConvParams::<f64>::zeros_deconv(1, 1, 3, 3);
        let x = Tensor::zeros([1, 1, 4, 4]);
        assert_eq!(deconv2d(&x, &p, 1, 1).unwrap().shape(), [1, 1, 4, 4]);
        assert_eq!(deconv2d(&x, &p, 2, 0).unwrap().shape(), [1, 1, 9, 9]);
        let x = Tensor::zeros([1, 1, 1, 1]);
        assert_eq!(deconv2d(&x, &p, 1, 2), Err(LayerError::EmptyOutput));
        let x = Tensor::zeros([1, 2, 4, 4]);
        assert!(matches!(deconv2d(&x, &p, 1, 1), Err(LayerError::ChannelMismatch { .. })));
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 3), (2, 0, 4)] {
            let a = random([1, 2, 5, 5], &mut rng);
            let w = random([3, 2, k, k], &mut rng);
            let conv_p = ConvParams { weight: w.clone(), bias: vec![0.0; 3] };
            let ca = conv2d(&a, &conv_p, stride, pad).unwrap();
            let b = random(ca.shape(), &mut rng);
            let deconv_p = ConvParams { weight: w, bias: vec![0.0; 2] };
            let db = deconv2d(&b, &deconv_p, stride, pad).unwrap();
            if db.shape() != a.shape() {
                // stride remainder: the deconv grid is smaller than a; compare on the overlap
                continue;
            }
            assert!((ca.dot(&b) - a.dot(&db)).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_adjoint_definition() {
        // dL/dx for L = <y, r> is deconv(r) with the same weight.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random([2, 2, 6, 6], &mut rng);
        let p = ConvParams { weight: random([3, 2, 3, 3], &mut rng), bias: vec![0.1, 0.2, 0.3] };
        let r = random([2, 3, 6, 6], &mut rng);
        let g = conv2d_backward(&x, &p, 1, 1, &r).unwrap();
        let dp = ConvParams { weight: p.weight.clone(), bias: vec![0.0; 2] };
        let expected = deconv2d(&r, &dp, 1, 1).unwrap();
        assert!(g.input.max_abs_diff(&expected) < 1e-12);
        for (o, &b) in g.bias.iter().enumerate() {
            let s: f64 = (0..2).map(|n| r.plane(n, o).iter().sum::<f64>()).sum();
            assert!((b - s).abs() < 1e-12);
        }
    }
}
