//! Optimizer steps and the step learning-rate schedule.

use crate::tensor::Real;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(TrainError::Config(format!("unknown optimizer '{other}' (sgd, adam)"))),
        }
    }
}

/// Per-parameter buffers: SGD velocity in `first`; Adam first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: Optimizer,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: Optimizer, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![T::zero(); n]).collect::<Vec<_>>();
        let second = if kind == Optimizer::Adam { zeros() } else { Vec::new() };
        Self { kind, first: zeros(), second, step: 0 }
    }
}

fn check_shapes<T>(params: &[&mut [T]], grads: &[Vec<T>], buffers: &[Vec<T>]) -> Result<(), TrainError> {
    let ok = params.len() == grads.len()
        && params.len() == buffers.len()
        && params.iter().zip(grads).zip(buffers).all(|((p, g), b)| p.len() == g.len() && p.len() == b.len());
    if ok {
        Ok(())
    } else {
        Err(TrainError::ShapeMismatch)
    }
}

/// `v ← momentum·v + grad + weight_decay·param`, then `param ← param − lr·v`.
pub fn sgd_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    velocity: &mut [Vec<T>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    check_shapes(params, grads, velocity)?;
    let (lr, mu, wd) = (T::from_f64_lossy(lr), T::from_f64_lossy(momentum), T::from_f64_lossy(weight_decay));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}

/// Bias-corrected Adam update. `step` counts completed updates and is incremented first.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    first: &mut [Vec<T>],
    second: &mut [Vec<T>],
    step: &mut u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), TrainError> {
    check_shapes(params, grads, first)?;
    check_shapes(params, grads, second)?;
    *step += 1;
    let t = *step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
    let (one, lr_t, eps) = (T::one(), T::from_f64_lossy(lr), T::from_f64_lossy(eps));
    let (c1, c2) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(first.iter_mut()).zip(second.iter_mut()) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `base_lr · gamma^floor(iter / step)`.
pub fn step_lr(iter: u64, base_lr: f64, gamma: f64, step: u64) -> f64 {
    let k = (iter / step.max(1)).min(i32::MAX as u64) as i32;
    base_lr * gamma.powi(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd1(p: &mut f64, g: f64, v: &mut [Vec<f64>], lr: f64, m: f64, wd: f64) {
        let mut buf = [*p];
        sgd_step(&mut [&mut buf[..]], &[vec![g]], v, lr, m, wd).unwrap();
        *p = buf[0];
    }

    #[test]
    fn plain_gradient_descent() {
        let mut v = vec![vec![0.0]];
        let mut p = 1.0;
        sgd1(&mut p, 0.5, &mut v, 0.1, 0.0, 0.0);
        assert!((p - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_second_update() {
        let (lr, m, g) = (0.1, 0.9, 2.0);
        let mut v = vec![vec![0.0]];
        let mut p = 0.0;
        sgd1(&mut p, g, &mut v, lr, m, 0.0);
        let before = p;
        sgd1(&mut p, g, &mut v, lr, m, 0.0);
        assert!(((before - p) - lr * g * (1.0 + m)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut v = vec![vec![0.0]];
        let mut p = 1.0;
        for _ in 0..200 {
            let g = 2.0 * p;
            sgd1(&mut p, g, &mut v, 0.1, 0.9, 0.0);
        }
        assert!(p.abs() < 1e-3, "{p}");
    }

    #[test]
    fn decay_contracts() {
        let mut v = vec![vec![0.0]];
        let mut p = 2.0;
        sgd1(&mut p, 0.0, &mut v, 0.1, 0.0, 0.01);
        assert!((p - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut buf = [0.0f64; 2];
        let mut v = vec![vec![0.0]];
        assert!(sgd_step(&mut [&mut buf[..]], &[vec![1.0, 1.0]], &mut v, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn adam_unit_step_and_zero_grad() {
        let mut buf = [1.0f64];
        let (mut m, mut v, mut t) = (vec![vec![0.0]], vec![vec![0.0]], 0);
        adam_step(&mut [&mut buf[..]], &[vec![1.0]], &mut m, &mut v, &mut t, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert!(((1.0 - buf[0]) - 1e-3).abs() < 1e-9);
        assert_eq!(t, 1);
        let mut buf = [1.0f64];
        let (mut m, mut v, mut t) = (vec![vec![0.0]], vec![vec![0.0]], 0);
        adam_step(&mut [&mut buf[..]], &[vec![0.0]], &mut m, &mut v, &mut t, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(buf[0], 1.0);
    }

    #[test]
    fn adam_quadratic_converges() {
        let mut buf = [1.0f64];
        let (mut m, mut v, mut t) = (vec![vec![0.0]], vec![vec![0.0]], 0);
        for _ in 0..2000 {
            let g = 2.0 * buf[0];
            adam_step(&mut [&mut buf[..]], &[vec![g]], &mut m, &mut v, &mut t, 0.01, 0.9, 0.999, 1e-8).unwrap();
        }
        assert!(buf[0].abs() < 1e-2, "{}", buf[0]);
    }

    #[test]
    fn schedule() {
        assert_eq!(step_lr(0, 0.1, 0.1, 10), 0.1);
        assert_eq!(step_lr(99_999, 1e-7, 0.1, 100_000), 1e-7);
        assert!((step_lr(45_000, 3.16e-3, 0.316, 45_000) - 9.99e-4).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let lr = step_lr(i, 1.0, 0.5, 7);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
