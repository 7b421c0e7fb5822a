//! In-gamut ab codebook on a 10-unit grid, nearest-bin encoding and annealed-mean decoding.

use crate::tensor::{Real, Tensor};

use super::{lab_to_srgb, ImagingError};

/// Grid spacing in ab units.
pub const AB_GRID: f64 = 10.0;
/// Bin count the codebook is required to reach.
pub const EXPECTED_BINS: usize = 313;
const GRID_MIN: i32 = -110;
const GRID_STEPS: i32 = 22;
const GAMUT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AbQuantizer {
    centers: Vec<[f64; 2]>,
}

impl AbQuantizer {
    /// Keeps every grid center (a outer, b inner, ascending) whose `(L, a, b)` maps into the
    /// RGB cube for at least one of `l_values`. No bin-count requirement.
    pub fn from_gamut_sweep(l_values: &[f64]) -> Self {
        let mut centers = Vec::new();
        for i in 0..GRID_STEPS {
            for j in 0..GRID_STEPS {
                let a = f64::from(GRID_MIN + 10 * i);
                let b = f64::from(GRID_MIN + 10 * j);
                let in_gamut = l_values.iter().any(|&l| {
                    lab_to_srgb([l, a, b]).iter().all(|&v| (-GAMUT_TOLERANCE..=1.0 + GAMUT_TOLERANCE).contains(&v))
                });
                if in_gamut {
                    centers.push([a, b]);
                }
            }
        }
        Self { centers }
    }

    /// Sweep over `L ∈ {5, 15, …, 95}`.
    pub fn standard_sweep() -> Self {
        let ls: Vec<f64> = (0..10).map(|i| 5.0 + 10.0 * i as f64).collect();
        Self::from_gamut_sweep(&ls)
    }

    pub fn from_centers(centers: Vec<[f64; 2]>) -> Self {
        Self { centers }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn contains(&self, a: f64, b: f64) -> bool {
        self.centers.contains(&[a, b])
    }

    /// Nearest center by Euclidean distance; ties go to the lower index.
    pub fn nearest(&self, a: f64, b: f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in self.centers.iter().enumerate() {
            let d = (c[0] - a).powi(2) + (c[1] - b).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

/// The standard sweep, rejected unless it produces exactly [`EXPECTED_BINS`] bins.
pub fn build_ab_quantizer() -> Result<AbQuantizer, ImagingError> {
    let q = AbQuantizer::standard_sweep();
    if q.len() != EXPECTED_BINS {
        return Err(ImagingError::QuantizerCount { got: q.len(), expected: EXPECTED_BINS });
    }
    Ok(q)
}

/// One label per pixel: the nearest codebook center to `(a[i], b[i])`.
pub fn encode_ab(a: &[f64], b: &[f64], q: &AbQuantizer) -> Vec<usize> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&a, &b)| q.nearest(a, b)).collect()
}

const NORMALIZATION_TOLERANCE: f64 = 1e-5;

/// Temperature-sharpened expectation of the codebook under per-pixel distributions
/// `probs` (`n × Q × h × w`). Returns `n × 2 × h × w` (a, b).
pub fn annealed_mean_decode<T: Real>(
    probs: &Tensor<T>,
    q: &AbQuantizer,
    temperature: f64,
) -> Result<Tensor<f64>, ImagingError> {
    if !(temperature > 0.0) {
        return Err(ImagingError::Temperature(temperature));
    }
    let [n, bins, h, w] = probs.shape();
    if bins != q.len() {
        return Err(ImagingError::Probabilities(format!("{bins} channels for a {}-bin codebook", q.len())));
    }
    let hw = h * w;
    let mut out = Tensor::zeros([n, 2, h, w]);
    let mut logits = vec![0.0f64; bins];
    for s in 0..n {
        let p = probs.sample(s);
        for px in 0..hw {
            let mut total = 0.0;
            for (k, l) in logits.iter_mut().enumerate() {
                let v = p[k * hw + px].as_f64();
                if !(v >= 0.0) {
                    return Err(ImagingError::Probabilities(format!("negative or NaN probability {v}")));
                }
                total += v;
                *l = if v > 0.0 { v.ln() / temperature } else { f64::NEG_INFINITY };
            }
            if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(ImagingError::Probabilities(format!("pixel {px} sums to {total}")));
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (mut z, mut ea, mut eb) = (0.0, 0.0, 0.0);
            for (l, c) in logits.iter().zip(q.centers()) {
                let wgt = (l - max).exp();
                z += wgt;
                ea += wgt * c[0];
                eb += wgt * c[1];
            }
            out.sample_mut(s)[px] = ea / z;
            out.sample_mut(s)[hw + px] = eb / z;
        }
    }
    Ok(out)
}
