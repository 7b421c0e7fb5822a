//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::fs;
use std::path::Path;

use super::{Image, ImagingError};

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImagingError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImagingError::Format(format!("expected {what} at byte {start}")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image, ImagingError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(ImagingError::Format("magic must be P5 or P6".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImagingError::Format(format!("empty image {width}x{height}")));
    }
    if maxval != 255 {
        return Err(ImagingError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImagingError::Format("missing whitespace after maxval".into()));
    }
    let payload = &bytes[h.pos + 1..];
    let expected = width * height * channels;
    if payload.len() < expected {
        return Err(ImagingError::Truncated { expected, found: payload.len() });
    }
    Image::from_data(width, height, channels, payload[..expected].to_vec())
}

pub fn read_pnm(path: &Path) -> Result<Image, ImagingError> {
    let bytes = fs::read(path).map_err(|source| ImagingError::Io { path: path.to_path_buf(), source })?;
    decode_pnm(&bytes)
}

/// Writes via a temp file and rename.
pub fn write_pnm(img: &Image, path: &Path) -> Result<(), ImagingError> {
    crate::fsutil::write_atomic(path, &encode_pnm(img))
        .map_err(|source| ImagingError::Io { path: path.to_path_buf(), source })
}
