//! QSFM matrix files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "QSFM"
//! 4       4     version, u32 LE (1 = f32 payload, 2 = f64 payload)
//! 8       8     rows, u64 LE (>= 1)
//! 16      8     cols, u64 LE
//! 24      ...   rows*cols values, little-endian, row-major
//! ```
//!
//! Feature and concept files use version 1. Checkpoints store parameters with
//! version 2 so that resumed training is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"QSFM";
pub const VERSION_F32: u32 = 1;
pub const VERSION_F64: u32 = 2;
pub const HEADER_LEN: usize = 24;

/// Row-major `f32` matrix as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!("{rows}x{cols} matrix given {} values", data.len())));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Rows `start..end` widened to `f64`.
    pub fn rows_f64(&self, start: usize, end: usize) -> Vec<f64> {
        self.data[start * self.cols..end * self.cols].iter().map(|&v| f64::from(v)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(VERSION_F32, self.rows, self.cols);
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (version, rows, cols) = parse_header(bytes)?;
        if version != VERSION_F32 {
            return Err(Error::Format(format!("expected an f32 matrix (version 1), found version {version}")));
        }
        let payload = check_payload(bytes, rows, cols, 4)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(FeatureMatrix { rows, cols, data })
    }
}

fn header(version: u32, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out
}

fn parse_header(bytes: &[u8]) -> Result<(u32, usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("matrix header needs {HEADER_LEN} bytes, found {}", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"QSFM\"", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if rows == 0 {
        return Err(Error::Format("matrix declares zero rows".into()));
    }
    let rows = usize::try_from(rows).map_err(|_| Error::Format(format!("row count {rows} too large")))?;
    let cols = usize::try_from(cols).map_err(|_| Error::Format(format!("column count {cols} too large")))?;
    Ok((version, rows, cols))
}

fn check_payload(bytes: &[u8], rows: usize, cols: usize, width: usize) -> Result<&[u8]> {
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::Format(format!("{rows}x{cols} matrix overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "{rows}x{cols} matrix needs {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    Ok(payload)
}

/// Encodes an `f64` matrix (version 2).
pub fn encode_f64(rows: usize, cols: usize, data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(rows * cols, data.len());
    let mut out = header(VERSION_F64, rows, cols);
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a version-2 matrix, returning `(rows, cols, values)`.
pub fn decode_f64(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let (version, rows, cols) = parse_header(bytes)?;
    if version != VERSION_F64 {
        return Err(Error::Format(format!("expected an f64 matrix (version 2), found version {version}")));
    }
    let payload = check_payload(bytes, rows, cols, 8)?;
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((rows, cols, data))
}

pub fn load_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_feature_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
    crate::io::write_atomic(path, &m.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_bytes_decode_exactly() {
        let mut bytes = b"QSFM".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        for v in [1.0f32, -2.5, 0.125, 3.0, 1e-3, -0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = FeatureMatrix::from_bytes(&bytes).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m.data(), &[1.0, -2.5, 0.125, 3.0, 1e-3, -0.0]);
        assert_eq!(m.to_bytes(), bytes);
    }

    #[test]
    fn zero_rows_rejected() {
        let mut bytes = b"QSFM".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        assert!(matches!(FeatureMatrix::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = FeatureMatrix::new(1, 1, vec![1.0]).unwrap().to_bytes();
        bytes[0] = b'X';
        let err = FeatureMatrix::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_payload_reports_byte_counts() {
        let mut bytes = FeatureMatrix::new(2, 2, vec![1.0; 4]).unwrap().to_bytes();
        bytes.truncate(bytes.len() - 3);
        let err = FeatureMatrix::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("16") && err.contains("13"), "{err}");
    }

    #[test]
    fn f64_payload_round_trips() {
        let data = vec![0.1, -1e300, f64::MIN_POSITIVE, 7.0];
        let bytes = encode_f64(2, 2, &data);
        assert_eq!(decode_f64(&bytes).unwrap(), (2, 2, data));
        assert!(FeatureMatrix::from_bytes(&bytes).is_err());
    }
}
