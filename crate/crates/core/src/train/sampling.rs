//! Deterministic random streams, crop sampling and additive white Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::imaging::Image;
use crate::tensor::{Real, Tensor};

use super::TrainError;

/// Independent generator for `(seed, stream)`; the same pair always yields the same sequence.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Axis-aligned `crop × crop` window at a uniformly random offset. Returns the window and its
/// `(x, y)` offset.
pub fn sample_crop(image: &Image, crop: usize, rng: &mut impl Rng) -> Result<(Image, (usize, usize)), TrainError> {
    if crop == 0 || image.width() < crop || image.height() < crop {
        return Err(TrainError::ImageTooSmall { width: image.width(), height: image.height(), crop });
    }
    let x = rng.gen_range(0..=image.width() - crop);
    let y = rng.gen_range(0..=image.height() - crop);
    Ok((image.crop(x, y, crop, crop), (x, y)))
}

/// Draws `σ ~ U[lo, hi]` (8-bit intensity units) and adds `N(0, (σ·unit)²)` to every element,
/// where `unit` is the tensor value of one intensity step. No clipping.
pub fn apply_wgn<T: Real>(
    patch: &Tensor<T>,
    sigma_range: (f64, f64),
    unit: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, f64), TrainError> {
    let (lo, hi) = sigma_range;
    if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
        return Err(TrainError::Config(format!("invalid noise range [{lo}, {hi}]")));
    }
    let sigma = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    if sigma == 0.0 {
        return Ok((patch.clone(), 0.0));
    }
    let std = sigma * unit;
    let mut noisy = patch.clone();
    for v in noisy.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += T::from_f64_lossy(std * n);
    }
    Ok((noisy, sigma))
}

/// Evaluation-set corruption: fixed σ, then clipped and quantized to 8 bits.
pub fn noisy_image(image: &Image, sigma: f64, rng: &mut impl Rng) -> Image {
    let mut out = image.clone();
    for v in out.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v = (*v as f64 + sigma * n).clamp(0.0, 255.0).round() as u8;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u32> = (0..4).map(|_| stream_rng(1, 2).gen()).collect();
        let mut r = stream_rng(1, 2);
        let b: u32 = r.gen();
        assert_eq!(a[0], b);
        assert_ne!(stream_rng(1, 3).gen::<u64>(), stream_rng(1, 2).gen::<u64>());
        assert_ne!(stream_rng(2, 2).gen::<u64>(), stream_rng(1, 2).gen::<u64>());
    }

    #[test]
    fn whole_image_crop() {
        let img = Image::from_data(4, 4, 1, (0..16).collect()).unwrap();
        let (c, off) = sample_crop(&img, 4, &mut stream_rng(0, 0)).unwrap();
        assert_eq!((c, off), (img.clone(), (0, 0)));
        assert!(sample_crop(&img, 5, &mut stream_rng(0, 0)).is_err());
    }

    #[test]
    fn crop_sequence_is_deterministic() {
        let img = Image::new(40, 30, 1);
        let offs = |seed| {
            let mut rng = stream_rng(seed, 0);
            (0..20).map(|_| sample_crop(&img, 8, &mut rng).unwrap().1).collect::<Vec<_>>()
        };
        assert_eq!(offs(5), offs(5));
        assert_ne!(offs(5), offs(6));
    }

    #[test]
    fn zero_range_is_identity() {
        let t = Tensor::from_fn([1, 1, 4, 4], |[_, _, y, x]| (y * 4 + x) as f32);
        let (n, s) = apply_wgn(&t, (0.0, 0.0), 1.0, &mut stream_rng(0, 0)).unwrap();
        assert_eq!((n, s), (t.clone(), 0.0));
        assert!(apply_wgn(&t, (5.0, 1.0), 1.0, &mut stream_rng(0, 0)).is_err());
        assert!(apply_wgn(&t, (-1.0, 1.0), 1.0, &mut stream_rng(0, 0)).is_err());
    }

    #[test]
    fn eval_noise_is_quantized_and_clipped() {
        let img = Image::from_data(64, 64, 1, vec![250; 4096]).unwrap();
        let noisy = noisy_image(&img, 25.0, &mut stream_rng(0, 0));
        assert!(noisy.data().contains(&255));
        assert_ne!(noisy, img);
        assert_eq!(noisy, noisy_image(&img, 25.0, &mut stream_rng(0, 0)));
    }
}
