//! SAMF: `"SAMF"`, version `u32 = 1`, `rows: u32`, `cols: u32`, then
//! `rows * cols` row-major `f32` values. All integers and floats are
//! little-endian; no trailing bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

pub const SAMF_MAGIC: &[u8; 4] = b"SAMF";
pub const SAMF_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("byte {offset}"),
        message: message.into(),
    }
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Parses SAMF bytes. Values are widened to `f64` exactly.
pub fn read_samf_bytes(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(
            bytes.len(),
            format!("truncated header: expected {HEADER_LEN} bytes, got {}", bytes.len()),
        ));
    }
    if &bytes[..4] != SAMF_MAGIC {
        return Err(parse_err(0, "bad magic, expected \"SAMF\""));
    }
    let version = u32_at(bytes, 4);
    if version != SAMF_VERSION {
        return Err(parse_err(4, format!("unsupported version {version}")));
    }
    let rows = u32_at(bytes, 8) as usize;
    let cols = u32_at(bytes, 12) as usize;
    if rows == 0 || cols == 0 {
        return Err(parse_err(8, format!("empty shape {rows}x{cols}")));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| parse_err(8, "shape overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        let what = if payload.len() < expected { "truncated payload" } else { "trailing bytes after payload" };
        return Err(parse_err(
            HEADER_LEN + payload.len().min(expected),
            format!("{what}: expected {expected} payload bytes, got {}", payload.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(parse_err(HEADER_LEN + 4 * k, format!("non-finite value {v}")));
        }
        data.push(v as f64);
    }
    FeatureMatrix::new(rows, cols, data)
}

pub fn read_samf(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    read_samf_bytes(&fs::read(path)?)
}

/// Encodes a matrix as SAMF, rounding each value to the nearest `f32`.
pub fn write_samf_bytes(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::invalid("matrix too large for SAMF"));
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(SAMF_MAGIC);
    out.extend_from_slice(&SAMF_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(m.rows())?.to_le_bytes());
    out.extend_from_slice(&dim(m.cols())?.to_le_bytes());
    for &v in m.as_slice() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::invalid(format!("value {v} overflows f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn write_samf(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    fs::write(path, write_samf_bytes(m)?)?;
    Ok(())
}
