use crate::tensor::{Real, Tensor};

use super::ImagingError;

/// Interleaved row-major 8-bit raster with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "images have 1 or 3 channels");
        Self { width, height, channels, data: vec![0; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::Channels { expected: 3, got: channels });
        }
        if data.len() != width * height * channels {
            return Err(ImagingError::SampleCount { width, height, channels, got: data.len() });
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Luma (full-range BT.601) of a color image; gray images are returned unchanged.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| quantize(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
            .collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        assert!(x0 + width <= self.width && y0 + height <= self.height, "crop outside image");
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Image { width, height, channels: c, data }
    }

    /// `1 × channels × h × w` tensor of intensities scaled to `[0, 1]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (w, c) = (self.width, self.channels);
        Tensor::from_fn([1, c, self.height, w], |[_, ch, y, x]| {
            T::from_f64_lossy(self.data[(y * w + x) * c + ch] as f64 / 255.0)
        })
    }

    /// Inverse of [`Self::to_tensor`] for sample `n`: scales by 255, clips and rounds.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Image, ImagingError> {
        let [_, c, h, w] = t.shape();
        if c != 1 && c != 3 {
            return Err(ImagingError::Channels { expected: 3, got: c });
        }
        let mut img = Image::new(w, h, c);
        for ch in 0..c {
            let plane = t.plane(n, ch);
            for (i, &v) in plane.iter().enumerate() {
                img.data[i * c + ch] = quantize(v.as_f64() * 255.0);
            }
        }
        Ok(img)
    }
}

/// Clips to `[0, 255]` and rounds half away from zero.
pub(crate) fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.clamp(0.0, 255.0).round() as u8
    }
}
