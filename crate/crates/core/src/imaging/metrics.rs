use super::{Image, ImagingError};

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse_u8(a: &Image, b: &Image) -> Result<f64, ImagingError> {
    if a.dims() != b.dims() {
        return Err(ImagingError::DimensionMismatch { a: a.dims(), b: b.dims() });
    }
    let sum: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    Ok(sum as f64 / a.data().len() as f64)
}

/// `10·log10(255² / mse)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64, ImagingError> {
    Ok(psnr_from_mse(mse_u8(a, b)?))
}
