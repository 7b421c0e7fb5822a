//! Full-range BT.601 YCbCr and sRGB ↔ CIELAB (D65) conversions on `[0, 255]` samples.

use super::image::quantize;
use super::{Image, ImagingError};

/// Three float planes of equal size, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub width: usize,
    pub height: usize,
    pub planes: [Vec<f64>; 3],
}

fn require_color(img: &Image) -> Result<(), ImagingError> {
    if img.channels() != 3 {
        return Err(ImagingError::Channels { expected: 3, got: img.channels() });
    }
    Ok(())
}

fn map_pixels(img: &Image, f: impl Fn([f64; 3]) -> [f64; 3]) -> Planes {
    let n = img.width() * img.height();
    let mut planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (i, p) in img.data().chunks_exact(3).enumerate() {
        let v = f([p[0] as f64, p[1] as f64, p[2] as f64]);
        for (plane, v) in planes.iter_mut().zip(v) {
            plane[i] = v;
        }
    }
    Planes { width: img.width(), height: img.height(), planes }
}

fn to_image(p: &Planes, f: impl Fn([f64; 3]) -> [f64; 3]) -> Image {
    let mut img = Image::new(p.width, p.height, 3);
    for (i, px) in img.data_mut().chunks_exact_mut(3).enumerate() {
        let v = f([p.planes[0][i], p.planes[1][i], p.planes[2][i]]);
        for (dst, v) in px.iter_mut().zip(v) {
            *dst = quantize(v);
        }
    }
    img
}

pub fn rgb_to_ycbcr(img: &Image) -> Result<Planes, ImagingError> {
    require_color(img)?;
    Ok(map_pixels(img, |[r, g, b]| {
        [
            0.299 * r + 0.587 * g + 0.114 * b,
            128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b,
            128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b,
        ]
    }))
}

pub fn ycbcr_to_rgb(p: &Planes) -> Image {
    to_image(p, |[y, cb, cr]| {
        let (cb, cr) = (cb - 128.0, cr - 128.0);
        [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb]
    })
}

/// D65 reference white in XYZ: the image of RGB `(1, 1, 1)`, so white has `a = b = 0`.
pub const LAB_WHITE: [f64; 3] = [0.950_455_927_051_65, 0.999_999_999_999_99, 1.089_057_750_759_87];

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_390_799_265_95, 0.357_584_339_383_87, 0.180_480_788_401_83],
    [0.212_639_005_871_51, 0.715_168_678_767_75, 0.072_192_315_360_73],
    [0.019_330_818_715_59, 0.119_194_779_794_62, 0.950_532_152_249_66],
];

/// Inverse of [`RGB_TO_XYZ`] to double precision.
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_969_941_904_603, -1.537_383_177_570_114_3, -0.498_610_760_293_008_94],
    [-0.969_243_636_280_910_6, 1.875_967_501_507_739_7, 0.041_555_057_407_182_98],
    [0.055_630_079_696_996_01, -0.203_976_958_888_969_83, 1.056_971_514_242_877_7],
];

fn srgb_decode(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    m.map(|row| row[0] * v[0] + row[1] * v[1] + row[2] * v[2])
}

/// sRGB in `[0, 1]` to `(L, a, b)`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let xyz = mul(&RGB_TO_XYZ, rgb.map(srgb_decode));
    let [fx, fy, fz] = [0, 1, 2].map(|i| lab_f(xyz[i] / LAB_WHITE[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// `(L, a, b)` to unclamped sRGB; components outside `[0, 1]` mean out of gamut.
pub fn lab_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let f = [fy + lab[1] / 500.0, fy, fy - lab[2] / 200.0];
    let xyz = [0, 1, 2].map(|i| lab_f_inv(f[i]) * LAB_WHITE[i]);
    mul(&XYZ_TO_RGB, xyz).map(|v| if v < 0.0 { v } else { srgb_encode(v) })
}

pub fn rgb_to_lab(img: &Image) -> Result<Planes, ImagingError> {
    require_color(img)?;
    Ok(map_pixels(img, |rgb| srgb_to_lab(rgb.map(|v| v / 255.0))))
}

/// Out-of-gamut colors are clamped per RGB channel.
pub fn lab_to_rgb(p: &Planes) -> Image {
    to_image(p, |lab| lab_to_srgb(lab).map(|v| v.clamp(0.0, 1.0) * 255.0))
}
