//! Noise statistics, crop uniformity, optimizer invariants and a short training run.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbdn_core::graph::{build_rbdn, RbdnConfig};
use rbdn_core::imaging::{toy_image, Image};
use rbdn_core::train::{
    apply_wgn, make_batch, sample_crop, sgd_step, step_lr, stream_rng, train_loop, Objective, Optimizer, TrainConfig,
};
use rbdn_core::Tensor;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Kolmogorov distribution tail `P(K > λ)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    let s: f64 = (1..=100).map(|k| (-1f64).powi(k - 1) * (-2.0 * f64::from(k * k) * lambda * lambda).exp()).sum();
    (2.0 * s).clamp(0.0, 1.0)
}

fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> (f64, f64) {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_tail(lambda))
}

#[test]
fn wgn_std_matches_sigma_over_a_million_samples() {
    let zero = Tensor::<f64>::zeros([1, 1, 1000, 1000]);
    for (sigma, seed) in [(25.0, 1), (8.0, 2), (50.0, 3)] {
        let (noisy, drawn) = apply_wgn(&zero, (sigma, sigma), 1.0, &mut stream_rng(seed, 0)).unwrap();
        assert_eq!(drawn, sigma);
        let n = noisy.len() as f64;
        let mean = noisy.sum() / n;
        let std = (noisy.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std / sigma - 1.0).abs() < 0.01, "σ={sigma}: std {std}");
        assert!(mean.abs() < 5.0 * sigma / n.sqrt());
        let lag1: f64 = noisy.data().windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (n - 1.0);
        assert!((lag1 / (std * std)).abs() < 0.01, "lag-1 autocorrelation {}", lag1 / (std * std));
    }
}

#[test]
fn wgn_unit_scales_and_zero_sigma_is_identity() {
    let patch = Tensor::<f32>::full([1, 1, 4, 4], 0.5);
    assert_eq!(apply_wgn(&patch, (0.0, 0.0), 1.0 / 255.0, &mut stream_rng(0, 0)).unwrap().0, patch);
    let zero = Tensor::<f64>::zeros([1, 1, 400, 400]);
    let (noisy, _) = apply_wgn(&zero, (25.0, 25.0), 1.0 / 255.0, &mut stream_rng(4, 0)).unwrap();
    let std = (noisy.dot(&noisy) / noisy.len() as f64).sqrt();
    assert!((std * 255.0 / 25.0 - 1.0).abs() < 0.02);
    assert!(apply_wgn(&zero, (50.0, 8.0), 1.0, &mut stream_rng(0, 0)).is_err());
}

#[test]
fn per_patch_sigma_is_uniform_by_ks() {
    let patch = Tensor::<f32>::zeros([1, 1, 1, 1]);
    let mut rng = stream_rng(5, 0);
    let sigmas: Vec<f64> = (0..10_000).map(|_| apply_wgn(&patch, (8.0, 50.0), 1.0, &mut rng).unwrap().1).collect();
    assert!(sigmas.iter().all(|s| (8.0..=50.0).contains(s)));
    let (d, p) = ks_uniform(sigmas, 8.0, 50.0);
    assert!(p > 0.01, "KS D={d} p={p}");
    // Negative control: a skewed sample must be rejected.
    let skewed: Vec<f64> = (0..10_000).map(|i| 8.0 + 42.0 * (i as f64 / 10_000.0).powi(2)).collect();
    assert!(ks_uniform(skewed, 8.0, 50.0).1 < 0.01);
}

#[test]
fn crop_offsets_are_uniform_by_chi_square() {
    let img = Image::new(20, 17, 1);
    let crop = 8;
    let (nx, ny) = (20 - crop + 1, 17 - crop + 1);
    let mut counts = vec![0u32; nx * ny];
    let mut rng = stream_rng(6, 0);
    let draws = 200 * nx * ny;
    for _ in 0..draws {
        let (patch, (x, y)) = sample_crop(&img, crop, &mut rng).unwrap();
        assert_eq!((patch.width(), patch.height()), (crop, crop));
        counts[y * nx + x] += 1;
    }
    let expected = draws as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    assert!(1.0 - dist.cdf(chi2) > 0.01, "χ² = {chi2}");
    assert!(sample_crop(&img, 18, &mut rng).is_err());
}

#[test]
fn batches_depend_only_on_seed_and_iteration() {
    let images: Vec<Image> = (0..4).map(|i| toy_image(40, 3, i)).collect();
    let cfg = TrainConfig { batch_size: 3, crop_size: 16, ..Default::default() };
    let a = make_batch(&images, &cfg, &Objective::Denoise, 17).unwrap();
    let b = make_batch(&images, &cfg, &Objective::Denoise, 17).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, make_batch(&images, &cfg, &Objective::Denoise, 18).unwrap());
    let other_seed = TrainConfig { seed: 1, ..cfg.clone() };
    assert_ne!(a, make_batch(&images, &other_seed, &Objective::Denoise, 17).unwrap());
    assert_eq!(a.input.shape(), [3, 1, 16, 16]);
    assert!(a.sigmas.iter().all(|s| (8.0..=50.0).contains(s)));
}

proptest! {
    #[test]
    fn sgd_with_zero_lr_is_identity(
        p in proptest::collection::vec(-5.0f64..5.0, 1..20),
        seed in any::<u64>(),
        momentum in 0.0f64..0.99,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = p.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut params = p.clone();
        let mut velocity = vec![p.iter().map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()];
        sgd_step(&mut [&mut params[..]], &[g], &mut velocity, 0.0, momentum, 1e-4).unwrap();
        prop_assert_eq!(params, p);
    }

    #[test]
    fn step_lr_never_increases(base in 1e-9f64..1.0, gamma in 0.0f64..=1.0, step in 1u64..1000, it in 0u64..100_000) {
        prop_assert!(step_lr(it + 1, base, gamma, step) <= step_lr(it, base, gamma, step));
        prop_assert!(step_lr(it, base, gamma, step) <= base);
    }

    #[test]
    fn weight_decay_contracts_norm(
        p in proptest::collection::vec(-5.0f64..5.0, 1..20),
        lr in 1e-4f64..0.5,
        wd in 1e-5f64..1e-2,
        steps in 1usize..6,
    ) {
        let mut params = p.clone();
        let mut velocity = vec![vec![0.0; p.len()]];
        for _ in 0..steps {
            sgd_step(&mut [&mut params[..]], &[vec![0.0; p.len()]], &mut velocity, lr, 0.0, wd).unwrap();
            velocity[0].iter_mut().for_each(|v| *v = 0.0);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected = norm(&p) * (1.0 - lr * wd).powi(steps as i32);
        prop_assert!((norm(&params) - expected).abs() <= 1e-12 * norm(&p).max(1.0));
    }
}

#[test]
fn b0_training_loss_trends_down() {
    let net = RbdnConfig { channels: 8, depth: 2, patch_kernel: 5, ..Default::default() };
    let mut g = build_rbdn::<f32>(&net).unwrap();
    g.initialize(&mut ChaCha8Rng::seed_from_u64(0));
    let images: Vec<Image> = (0..16).map(|i| toy_image(48, 11, i)).collect();
    let cfg = TrainConfig {
        base_lr: 1e-3,
        optimizer: Optimizer::Adam,
        batch_size: 4,
        crop_size: 24,
        max_iters: 500,
        noise_sigma_range: (25.0, 25.0),
        ..Default::default()
    };
    let out = train_loop(&mut g, &images, &cfg, &Objective::Denoise, 1, &mut |_| Ok(())).unwrap();
    let losses: Vec<f64> = out.loss_curve.iter().map(|p| p.loss).collect();
    assert_eq!(losses.len(), 500);
    let window = |i: usize| losses[i..i + 50].iter().sum::<f64>() / 50.0;
    let (first, last) = (window(0), window(450));
    assert!(last < 0.5 * first, "moving average {first} -> {last}");
}
