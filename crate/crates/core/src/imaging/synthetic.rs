//! Procedural piecewise-constant grayscale scenes for desk-scale denoising experiments.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_pnm, Image, ImagingError};

/// Scene `index` of the family identified by `seed`: a mosaic of 4 to 8 flat Voronoi cells.
/// Large uniform regions reward context beyond a small patch, which is what extra branches
/// add. Deterministic in `(seed, index)`.
pub fn toy_image(size: usize, seed: u64, index: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = size as f64;
    let cells: Vec<(f64, f64, u8)> = (0..rng.gen_range(4..9))
        .map(|_| (rng.gen_range(0.0..s), rng.gen_range(0.0..s), rng.gen_range(20.0f64..235.0).round() as u8))
        .collect();
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let d2 = |c: &(f64, f64, u8)| (c.0 - x as f64).powi(2) + (c.1 - y as f64).powi(2);
            // Ties go to the earlier cell.
            let nearest = cells.iter().min_by(|a, b| d2(a).total_cmp(&d2(b))).expect("at least four cells");
            data.push(nearest.2);
        }
    }
    Image::from_data(size, size, 1, data).expect("square gray canvas")
}

/// Writes `count` scenes as `toy_0000.pgm`, `toy_0001.pgm`, … into `dir`.
pub fn write_toy_dataset(
    dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
    first_index: u64,
) -> Result<(), ImagingError> {
    std::fs::create_dir_all(dir).map_err(|source| ImagingError::Io { path: dir.to_path_buf(), source })?;
    for i in 0..count {
        let img = toy_image(size, seed, first_index + i as u64);
        write_pnm(&img, &dir.join(format!("toy_{i:04}.pgm")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = toy_image(32, 7, 0);
        assert_eq!(a, toy_image(32, 7, 0));
        assert_ne!(a, toy_image(32, 7, 1));
        assert_ne!(a, toy_image(32, 8, 0));
        assert_eq!(a.dims(), (32, 32, 1));
        let distinct: std::collections::BTreeSet<u8> = a.data().iter().copied().collect();
        assert!((2..=8).contains(&distinct.len()), "{distinct:?}");
    }
}
