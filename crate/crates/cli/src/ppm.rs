//! Binary PPM (P6, maxval 255).

use std::path::Path;

use sphsplat_core::render::RgbImage;

use crate::dataset::DatasetError;

pub fn encode_ppm(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), 3 * width as usize * height as usize, "pixel buffer size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Parses a P6 image; header comments are allowed.
pub fn decode_ppm(bytes: &[u8], file: &Path) -> Result<(u32, u32, Vec<u8>), DatasetError> {
    let bad = |reason: &str| DatasetError::Format { file: file.to_path_buf(), reason: reason.to_string() };
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token().as_deref() != Some("P6") {
        return Err(bad("not a binary PPM (P6)"));
    }
    let mut num = || token().and_then(|t| t.parse::<u32>().ok());
    let (Some(w), Some(h), Some(maxval)) = (num(), num(), num()) else {
        return Err(bad("malformed header"));
    };
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    pos += 1;
    let expected = 3 * w as usize * h as usize;
    let got = bytes.len().saturating_sub(pos);
    if got != expected {
        return Err(DatasetError::SizeMismatch { file: file.to_path_buf(), expected, got });
    }
    Ok((w, h, bytes[pos..].to_vec()))
}

pub fn write_image(path: &Path, img: &RgbImage) -> Result<(), DatasetError> {
    crate::dataset::write_file(path, &encode_ppm(img.width, img.height, &img.to_u8()))
}

pub fn read_image(path: &Path) -> Result<RgbImage, DatasetError> {
    let bytes = crate::dataset::read_file(path)?;
    let (w, h, data) = decode_ppm(&bytes, path)?;
    Ok(RgbImage::from_u8(w, h, &data))
}
