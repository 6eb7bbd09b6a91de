//! `TFM1` matrix interchange format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic  b"TFM1"
//! offset 4   rows   u32
//! offset 8   cols   u32
//! offset 12  dtype  u8   (0 = f32)
//! offset 13  rows * cols * 4 bytes of f32, row-major
//! ```
//!
//! Masks are stored frames × bins.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::error::Result;
use crate::masks::TFMask;

pub const MAGIC: &[u8; 4] = b"TFM1";
pub const HEADER_LEN: usize = 13;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum TfmError {
    #[error("bad magic {found:?}, expected \"TFM1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated header: {len} byte(s), need {HEADER_LEN}")]
    TruncatedHeader { len: usize },
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),
    #[error("header declares {rows}x{cols} ({expected} payload bytes) but payload has {actual}")]
    SizeMismatch {
        rows: u32,
        cols: u32,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("value {value} at ({row}, {col}) outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f32 },
}

pub fn encode_matrix(matrix: ArrayView2<f32>) -> Vec<u8> {
    let (rows, cols) = matrix.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.push(DTYPE_F32);
    for x in matrix.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> std::result::Result<Array2<f32>, TfmError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(TfmError::BadMagic {
                found: [bytes[0], bytes[1], bytes[2], bytes[3]],
            });
        }
        return Err(TfmError::TruncatedHeader { len: bytes.len() });
    }
    if &bytes[..4] != MAGIC {
        return Err(TfmError::BadMagic {
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if bytes[12] != DTYPE_F32 {
        return Err(TfmError::UnsupportedDtype(bytes[12]));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = (rows as usize)
        .checked_mul(cols as usize)
        .and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(TfmError::SizeMismatch {
            rows,
            cols,
            expected: expected.unwrap_or(usize::MAX),
            actual: payload.len(),
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Array2::from_shape_vec((rows as usize, cols as usize), values)
        .expect("payload length checked against header"))
}

pub fn write_matrix(path: impl AsRef<Path>, matrix: ArrayView2<f32>) -> Result<()> {
    std::fs::write(path, encode_matrix(matrix))?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let bytes = std::fs::read(path)?;
    Ok(decode_matrix(&bytes)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &TFMask) -> Result<()> {
    write_matrix(path, mask.data().mapv(|x| x as f32).view())
}

/// Reads a mask. Under `strict`, any value outside `[0, 1]` is an error naming
/// the first offending cell in row-major order; otherwise values are clamped.
/// Non-finite values are always rejected.
pub fn read_mask(path: impl AsRef<Path>, strict: bool) -> Result<TFMask> {
    let matrix = read_matrix(path)?;
    Ok(mask_from_matrix(matrix.view(), strict)?)
}

pub fn mask_from_matrix(
    matrix: ArrayView2<f32>,
    strict: bool,
) -> std::result::Result<TFMask, TfmError> {
    for ((row, col), &value) in matrix.indexed_iter() {
        if !value.is_finite() {
            return Err(TfmError::NonFinite { row, col });
        }
        if strict && !(0.0..=1.0).contains(&value) {
            return Err(TfmError::OutOfRange { row, col, value });
        }
    }
    Ok(TFMask::from_clamped(matrix.mapv(|x| x as f64)))
}
