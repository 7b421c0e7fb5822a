//! Per-channel batch normalization over `(n, h, w)`.

use crate::tensor::{Real, Tensor};

use super::{LayerError, Mode};

pub const DEFAULT_EPS: f64 = 1e-5;
/// Weight of the old running statistic in the exponential moving average.
pub const DEFAULT_STAT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Whether the running statistics hold anything besides their initial values.
    pub tracked: bool,
}

impl<T: Real> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            tracked: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Installs running statistics directly, marking them as usable for evaluation.
    pub fn set_running_stats(&mut self, mean: Vec<T>, var: Vec<T>) -> Result<(), LayerError> {
        if mean.len() != self.channels() || var.len() != self.channels() {
            return Err(LayerError::BadParams("running stat length mismatch".into()));
        }
        if var.iter().any(|&v| !(v > T::zero())) {
            return Err(LayerError::BadParams("running variance must be strictly positive".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.tracked = true;
        Ok(())
    }
}

/// Values saved by the forward pass for [`batchnorm2d_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

pub fn batchnorm2d<T: Real>(
    x: &Tensor<T>,
    p: &mut BatchNormParams<T>,
    mode: Mode,
    eps: f64,
    stat_momentum: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>), LayerError> {
    let [n, c, h, w] = x.shape();
    if c != p.channels() {
        return Err(LayerError::ChannelMismatch { expected: p.channels(), got: c });
    }
    if mode == Mode::Eval && !p.tracked {
        return Err(LayerError::BatchNormUninitialized);
    }
    let hw = h * w;
    let m = (n * hw) as f64;
    let eps_t = T::from_f64_lossy(eps);
    let mut inv_std = vec![T::zero(); c];
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    #[allow(clippy::needless_range_loop)]
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0f64;
                for b in 0..n {
                    sum += x.plane(b, ch).iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / m;
                let mut sq = 0.0f64;
                for b in 0..n {
                    sq += x.plane(b, ch).iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
                }
                let var = sq / m;
                let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                let mom = stat_momentum;
                let rm = mom * p.running_mean[ch].as_f64() + (1.0 - mom) * mean;
                let rv = mom * p.running_var[ch].as_f64() + (1.0 - mom) * unbiased;
                p.running_mean[ch] = T::from_f64_lossy(rm);
                p.running_var[ch] = T::from_f64_lossy(rv).max(T::min_positive_value());
                (T::from_f64_lossy(mean), T::from_f64_lossy(var))
            }
            Mode::Eval => (p.running_mean[ch], p.running_var[ch]),
        };
        let is = T::one() / (var + eps_t).sqrt();
        inv_std[ch] = is;
        let (g, bt) = (p.gamma[ch], p.beta[ch]);
        for b in 0..n {
            let off = (b * c + ch) * hw;
            let src = &x.data()[off..off + hw];
            let xh = &mut xhat.data_mut()[off..off + hw];
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mean) * is;
            }
            let out = &mut y.data_mut()[off..off + hw];
            for (o, &v) in out.iter_mut().zip(xh.iter()) {
                *o = g * v + bt;
            }
        }
    }
    if mode == Mode::Train {
        p.tracked = true;
    }
    debug_assert!(
        !(x.data().iter().all(|v| v.abs() < T::max_value().sqrt())
            && p.gamma.iter().chain(&p.beta).all(|v| v.is_finite()))
            || !y.has_nan(),
        "batchnorm produced NaN from moderate operands"
    );
    Ok((y, BatchNormCache { mode, xhat, inv_std }))
}

/// `(dx, dgamma, dbeta)`.
pub type BatchNormGrads<T> = (Tensor<T>, Vec<T>, Vec<T>);

/// Gradients with respect to the input, `gamma` and `beta`.
pub fn batchnorm2d_backward<T: Real>(
    cache: &BatchNormCache<T>,
    p: &BatchNormParams<T>,
    dy: &Tensor<T>,
) -> Result<BatchNormGrads<T>, LayerError> {
    if dy.shape() != cache.xhat.shape() {
        return Err(LayerError::ShapeMismatch { expected: cache.xhat.shape(), got: dy.shape() });
    }
    let [n, c, h, w] = dy.shape();
    let hw = h * w;
    let m = T::from_usize(n * hw).expect("count fits");
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * hw;
            let g = &dy.data()[off..off + hw];
            let xh = &cache.xhat.data()[off..off + hw];
            for (&gv, &xv) in g.iter().zip(xh) {
                sum_dy += gv;
                sum_dy_xhat += gv * xv;
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = p.gamma[ch] * cache.inv_std[ch];
        for b in 0..n {
            let off = (b * c + ch) * hw;
            let g = &dy.data()[off..off + hw];
            let xh = &cache.xhat.data()[off..off + hw];
            let d = &mut dx.data_mut()[off..off + hw];
            match cache.mode {
                Mode::Train => {
                    let k = scale / m;
                    for ((dv, &gv), &xv) in d.iter_mut().zip(g).zip(xh) {
                        *dv = k * (m * gv - sum_dy - xv * sum_dy_xhat);
                    }
                }
                Mode::Eval => {
                    for (dv, &gv) in d.iter_mut().zip(g) {
                        *dv = scale * gv;
                    }
                }
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}
