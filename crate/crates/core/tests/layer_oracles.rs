//! Layers against independent nested-loop oracles, plus layer-level invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbdn_core::layers::gradcheck::{well_separated, BatchNormLayer, ConvLayer, DeconvLayer, MaxPoolLayer, ReluLayer};
use rbdn_core::layers::{
    batchnorm2d, bilinear_upsample2x, conv2d, deconv2d, finite_diff_check, maxpool2d, maxunpool2d, BatchNormParams,
    ConvParams, Mode,
};
use rbdn_core::Tensor;

const TOL: f64 = 1e-10;

fn random(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Direct cross-correlation with zero padding.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let [n, ci, h, wd] = x.shape();
    let [co, _, kh, kw] = w.shape();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut y = Tensor::zeros([n, co, oh, ow]);
    for s in 0..n {
        for o in 0..co {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = b[o];
                    for i in 0..ci {
                        for u in 0..kh {
                            for v in 0..kw {
                                let (yy, xx) = (
                                    (r * stride + u) as isize - pad as isize,
                                    (c * stride + v) as isize - pad as isize,
                                );
                                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < wd {
                                    acc += w[[o, i, u, v]] * x[[s, i, yy as usize, xx as usize]];
                                }
                            }
                        }
                    }
                    y[[s, o, r, c]] = acc;
                }
            }
        }
    }
    y
}

/// Scatter form of the transposed convolution.
fn deconv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let [n, ci, h, wd] = x.shape();
    let [_, co, kh, kw] = w.shape();
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut y = Tensor::from_fn([n, co, oh, ow], |[_, o, _, _]| b[o]);
    for s in 0..n {
        for i in 0..ci {
            for r in 0..h {
                for c in 0..wd {
                    for o in 0..co {
                        for u in 0..kh {
                            for v in 0..kw {
                                let (yy, xx) = (
                                    (r * stride + u) as isize - pad as isize,
                                    (c * stride + v) as isize - pad as isize,
                                );
                                if yy >= 0 && xx >= 0 && (yy as usize) < oh && (xx as usize) < ow {
                                    y[[s, o, yy as usize, xx as usize]] += w[[i, o, u, v]] * x[[s, i, r, c]];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn maxpool_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.shape();
    Tensor::from_fn([n, c, h / 2, w / 2], |[s, k, r, q]| {
        let v = [
            x[[s, k, 2 * r, 2 * q]],
            x[[s, k, 2 * r, 2 * q + 1]],
            x[[s, k, 2 * r + 1, 2 * q]],
            x[[s, k, 2 * r + 1, 2 * q + 1]],
        ];
        v.into_iter().fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Half-pixel 2× interpolation in closed form: even outputs weigh the left neighbour by 1/4,
/// odd outputs the right one, with edge replication.
fn upsample_1d(row: &[f64]) -> Vec<f64> {
    let n = row.len();
    let at = |i: isize| row[i.clamp(0, n as isize - 1) as usize];
    (0..2 * n)
        .map(|o| {
            let i = (o / 2) as isize;
            if o % 2 == 0 {
                0.25 * at(i - 1) + 0.75 * at(i)
            } else {
                0.75 * at(i) + 0.25 * at(i + 1)
            }
        })
        .collect()
}

fn bilinear_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.shape();
    let mut rows = Tensor::zeros([n, c, h, 2 * w]);
    for s in 0..n {
        for k in 0..c {
            for r in 0..h {
                let src: Vec<f64> = (0..w).map(|q| x[[s, k, r, q]]).collect();
                for (q, v) in upsample_1d(&src).into_iter().enumerate() {
                    rows[[s, k, r, q]] = v;
                }
            }
        }
    }
    let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for s in 0..n {
        for k in 0..c {
            for q in 0..2 * w {
                let src: Vec<f64> = (0..h).map(|r| rows[[s, k, r, q]]).collect();
                for (r, v) in upsample_1d(&src).into_iter().enumerate() {
                    y[[s, k, r, q]] = v;
                }
            }
        }
    }
    y
}

/// Random small geometry: `(x shape, kernel, stride, pad)` with the kernel fitting the padded input.
fn geometry(rng: &mut impl Rng) -> ([usize; 4], usize, usize, usize) {
    let k = [1, 2, 3, 4, 5][rng.gen_range(0..5)];
    let stride = rng.gen_range(1..=3);
    let pad = rng.gen_range(0..k);
    let h = rng.gen_range(k.max(1)..k + 7);
    let w = rng.gen_range(k.max(1)..k + 7);
    ([rng.gen_range(1..=2), rng.gen_range(1..=3), h, w], k, stride, pad)
}

#[test]
fn conv2d_matches_oracle_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let (xs, k, stride, pad) = geometry(&mut rng);
        let co = rng.gen_range(1..=3);
        let x = random(xs, &mut rng);
        let p = ConvParams { weight: random([co, xs[1], k, k], &mut rng), bias: (0..co).map(|_| rng.gen()).collect() };
        let got = conv2d(&x, &p, stride, pad).unwrap();
        let want = conv_oracle(&x, &p.weight, &p.bias, stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) < TOL, "{xs:?} k={k} s={stride} p={pad}");
    }
}

#[test]
fn deconv2d_matches_oracle_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    while checked < 100 {
        let (xs, k, stride, pad) = geometry(&mut rng);
        if (xs[2] - 1) * stride + k <= 2 * pad || (xs[3] - 1) * stride + k <= 2 * pad {
            continue;
        }
        let co = rng.gen_range(1..=3);
        let x = random(xs, &mut rng);
        let p = ConvParams { weight: random([xs[1], co, k, k], &mut rng), bias: (0..co).map(|_| rng.gen()).collect() };
        let got = deconv2d(&x, &p, stride, pad).unwrap();
        let want = deconv_oracle(&x, &p.weight, &p.bias, stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) < TOL, "{xs:?} k={k} s={stride} p={pad}");
        checked += 1;
    }
}

#[test]
fn maxpool2d_matches_oracle_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..100 {
        let shape = [rng.gen_range(1..=2), rng.gen_range(1..=3), 2 * rng.gen_range(1..=5), 2 * rng.gen_range(1..=5)];
        let x = random(shape, &mut rng);
        let (y, _) = maxpool2d(&x).unwrap();
        assert!(y.max_abs_diff(&maxpool_oracle(&x)) < TOL);
    }
}

#[test]
fn bilinear_matches_oracle_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..100 {
        let shape = [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=6)];
        let x = random(shape, &mut rng);
        assert!(bilinear_upsample2x(&x).max_abs_diff(&bilinear_oracle(&x)) < TOL, "{shape:?}");
    }
}

#[test]
fn conv_deconv_adjoint_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut checked = 0;
    while checked < 100 {
        let (xs, k, stride, pad) = geometry(&mut rng);
        // The transposed output must land back on x's extent, which needs no leftover rows.
        if (xs[2] + 2 * pad - k) % stride != 0 || (xs[3] + 2 * pad - k) % stride != 0 {
            continue;
        }
        checked += 1;
        let co = rng.gen_range(1..=3);
        let x = random(xs, &mut rng);
        let w = random([co, xs[1], k, k], &mut rng);
        let conv = ConvParams { weight: w.clone(), bias: vec![0.0; co] };
        let y_shape = conv2d(&x, &conv, stride, pad).unwrap().shape();
        let y = random(y_shape, &mut rng);
        let deconv = ConvParams { weight: w, bias: vec![0.0; xs[1]] };
        let lhs = conv2d(&x, &conv, stride, pad).unwrap().dot(&y);
        let rhs = x.dot(&deconv2d(&y, &deconv, stride, pad).unwrap());
        assert!((lhs - rhs).abs() < TOL * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

fn conv_case(seed: u64, deconv: bool) -> (Box<dyn rbdn_core::layers::Differentiable>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let x = random([rng.gen_range(1..=2), ci, rng.gen_range(k..k + 4), rng.gen_range(k..k + 4)], &mut rng);
    let bias = (0..co).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let pad = (k - 1) / 2;
    if deconv {
        let params = ConvParams { weight: random([ci, co, k, k], &mut rng), bias };
        (Box::new(DeconvLayer { params, stride: 1, pad }), x)
    } else {
        let params = ConvParams { weight: random([co, ci, k, k], &mut rng), bias };
        (Box::new(ConvLayer { params, stride: 1, pad }), x)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_layers_pass_gradcheck(seed in any::<u64>(), deconv in any::<bool>()) {
        let (mut layer, x) = conv_case(seed, deconv);
        let r = finite_diff_check(layer.as_mut(), &x, 1e-5).unwrap();
        prop_assert!(r.max_rel_error() < 1e-5, "{:?}", r.entries);
    }

    #[test]
    fn nonlinear_layers_pass_gradcheck(seed in any::<u64>(), which in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = well_separated([2, 2, 4, 4], 1e-3, &mut rng);
        let r = match which {
            0 => finite_diff_check(&mut ReluLayer, &x, 1e-5),
            1 => finite_diff_check(&mut MaxPoolLayer, &x, 1e-5),
            _ => {
                let mut params = BatchNormParams::new(2);
                params.gamma = vec![rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)];
                finite_diff_check(&mut BatchNormLayer { params }, &x, 1e-5)
            }
        }
        .unwrap();
        prop_assert!(r.max_rel_error() < 1e-5, "{:?}", r.entries);
    }

    #[test]
    fn batchnorm_train_output_is_standardized(
        vals in proptest::collection::vec(-50.0f64..50.0, 2 * 3 * 4 * 4),
        shift in -100.0f64..100.0,
    ) {
        let x = Tensor::from_vec([2, 3, 4, 4], vals.iter().map(|v| v + shift).collect()).unwrap();
        // Degenerate channels have no unit variance to reach.
        for c in 0..3 {
            let ch: Vec<f64> = (0..2).flat_map(|n| x.plane(n, c).to_vec()).collect();
            let m = ch.iter().sum::<f64>() / ch.len() as f64;
            prop_assume!(ch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ch.len() as f64) > 1.0);
        }
        let mut p = BatchNormParams::new(3);
        let (y, _) = batchnorm2d(&x, &mut p, Mode::Train, 1e-5, 0.9).unwrap();
        for c in 0..3 {
            let ch: Vec<f64> = (0..2).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let m = ch.iter().sum::<f64>() / ch.len() as f64;
            let v = ch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / ch.len() as f64;
            prop_assert!(m.abs() < 1e-6);
            prop_assert!((v - 1.0).abs() < 1e-5, "var {}", v);
        }
    }

    #[test]
    fn unpool_keeps_one_value_per_window(vals in proptest::collection::vec(-10.0f64..10.0, 2 * 6 * 4)) {
        let x = Tensor::from_vec([1, 2, 6, 4], vals).unwrap();
        let (y, s) = maxpool2d(&x).unwrap();
        let up = maxunpool2d(&y, &s, 6, 4).unwrap();
        for c in 0..2 {
            for r in 0..3 {
                for q in 0..2 {
                    let win = [up[[0, c, 2 * r, 2 * q]], up[[0, c, 2 * r, 2 * q + 1]], up[[0, c, 2 * r + 1, 2 * q]], up[[0, c, 2 * r + 1, 2 * q + 1]]];
                    prop_assert!(win.iter().filter(|v| **v != 0.0).count() <= 1);
                    prop_assert_eq!(win.iter().sum::<f64>(), y[[0, c, r, q]]);
                }
            }
        }
    }

    #[test]
    fn layers_are_pure(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([2, 2, 6, 6], &mut rng);
        let p = ConvParams { weight: random([3, 2, 3, 3], &mut rng), bias: vec![0.1, 0.2, 0.3] };
        prop_assert_eq!(conv2d(&x, &p, 1, 1).unwrap(), conv2d(&x, &p, 1, 1).unwrap());
        prop_assert_eq!(maxpool2d(&x).unwrap().0, maxpool2d(&x).unwrap().0);
        prop_assert_eq!(bilinear_upsample2x(&x), bilinear_upsample2x(&x));
        let mut a = BatchNormParams::new(2);
        let mut b = BatchNormParams::new(2);
        prop_assert_eq!(
            batchnorm2d(&x, &mut a, Mode::Train, 1e-5, 0.9).unwrap().0,
            batchnorm2d(&x, &mut b, Mode::Train, 1e-5, 0.9).unwrap().0
        );
    }
}
