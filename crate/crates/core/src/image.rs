//! Binary greyscale PGM (`P5`) dumps of signal vectors.

use std::path::Path;

use crate::error::{Error, Result};

/// Linear map of `[min, max]` onto `0..=255`; a constant vector maps to 128.
pub fn quantize(x: &[f64]) -> Result<Vec<u8>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("cannot quantize non-finite values".into()));
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(vec![128; x.len()]);
    }
    let span = hi - lo;
    Ok(x.iter().map(|&v| (255.0 * (v - lo) / span).round() as u8).collect())
}

pub fn encode_pgm(x: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if width.checked_mul(height) != Some(x.len()) {
        return Err(Error::dim(format!("image {width}x{height}"), width.saturating_mul(height), x.len()));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(quantize(x)?);
    Ok(out)
}

pub fn dump_image(x: &[f64], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pgm(x, width, height)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// `(width, height, pixels)` of a maxval-255 `P5` image.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Truncated {
                expected: start + 1,
                actual: bytes.len(),
            });
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err(Error::Format {
            offset: 0,
            message: "not a binary PGM".into(),
        });
    }
    let num = |pos: &mut usize| -> Result<usize> {
        let at = *pos;
        token(pos)?.parse().map_err(|_| Error::Format {
            offset: at,
            message: "bad PGM header number".into(),
        })
    };
    let width = num(&mut pos)?;
    let height = num(&mut pos)?;
    let at = pos;
    if num(&mut pos)? != 255 {
        return Err(Error::Format {
            offset: at,
            message: "only maxval 255 is supported".into(),
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = pos + width * height;
    if bytes.len() != need {
        return Err(Error::Truncated {
            expected: need,
            actual: bytes.len(),
        });
    }
    Ok((width, height, bytes[pos..].to_vec()))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&std::fs::read(path)?)
}
