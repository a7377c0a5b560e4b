//! On-disk formats.
//!
//! Feature file (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "PACE"
//!      4     4  version u32 = 1
//!      8     8  n u64
//!     16     8  d u64
//!     24     1  dtype u8 (0 = f32)
//!     25     3  zero padding
//!     28   4nd  row-major f32 payload
//! ```
//!
//! Label file: magic "PACL", version u32 = 1, n u64, K u32, then n u32 labels.
//!
//! Paths ending in `.csv` use the text fallback instead: one comma-separated
//! row per line with no header, labels one integer per line.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"PACE";
pub const LABEL_MAGIC: &[u8; 4] = b"PACL";
pub const FORMAT_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 28;
pub const LABEL_HEADER_LEN: usize = 20;
const DTYPE_F32: u8 = 0;

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

fn checked_count(a: u64, b: u64, width: u64) -> Result<usize> {
    a.checked_mul(b)
        .and_then(|c| c.checked_mul(width))
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::Format(format!("header dimensions {a}x{b} overflow")))
}

/// Parses a feature file into an array that may have zero rows.
pub(crate) fn read_feature_array(path: &Path) -> Result<Array2<f64>> {
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return parse_feature_csv(&text);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

pub(crate) fn decode_features(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {FEATURE_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"PACE\"",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u64_at(bytes, 8);
    let d = u64_at(bytes, 16);
    let dtype = bytes[24];
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    let expected = checked_count(n, d, 4)?;
    let payload = &bytes[FEATURE_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Length {
            expected,
            found: payload.len(),
        });
    }
    let (n, d) = (n as usize, d as usize);
    let mut values = Vec::with_capacity(n * d);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite entry at row {}, column {}",
                i / d.max(1),
                i % d.max(1)
            )));
        }
        values.push(v as f64);
    }
    Array2::from_shape_vec((n, d), values).map_err(|e| Error::Format(e.to_string()))
}

fn parse_feature_csv(text: &str) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut d = None;
    let mut n = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {tok:?}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        match d {
            None => d = Some(row.len()),
            Some(width) if width != row.len() => {
                return Err(Error::Format(format!(
                    "line {} has {} columns, expected {width}",
                    lineno + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite entry at row {n}, column {j}")));
        }
        values.extend(row);
        n += 1;
    }
    Array2::from_shape_vec((n, d.unwrap_or(0)), values).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    FeatureMatrix::new(read_feature_array(path.as_ref())?)
}

pub(crate) fn encode_features(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let (n, d) = (m.n(), m.d());
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * n * d);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&[0u8; 3]);
    for (i, &v) in m.as_array().iter().enumerate() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::Validation(format!(
                "entry at row {}, column {} ({v}) is not representable as f32",
                i / d,
                i % d
            )));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

pub fn save_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        let mut text = String::new();
        for row in m.as_array().rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            text.push_str(&line.join(","));
            text.push('\n');
        }
        text.into_bytes()
    } else {
        encode_features(m)?
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a label file; the result may be empty.
pub(crate) fn read_label_vector(path: &Path) -> Result<LabelVector> {
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels: Vec<u32> = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<u32>().map_err(|e| Error::Format(format!("label {t:?}: {e}"))))
            .collect::<Result<_>>()?;
        let k = labels.iter().max().map_or(1, |&m| m as usize + 1);
        return LabelVector::new(labels, k);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes)
}

pub(crate) fn decode_labels(bytes: &[u8]) -> Result<LabelVector> {
    if bytes.len() < LABEL_HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {LABEL_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"PACL\"",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u64_at(bytes, 8);
    let k = u32_at(bytes, 16);
    let expected = checked_count(n, 1, 4)?;
    let payload = &bytes[LABEL_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Length {
            expected,
            found: payload.len(),
        });
    }
    let labels = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelVector::new(labels, k as usize)
}

/// Loads a label file; an empty vector is rejected.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let labels = read_label_vector(path.as_ref())?;
    if labels.is_empty() {
        return Err(Error::Validation(format!(
            "{} holds no labels",
            path.as_ref().display()
        )));
    }
    Ok(labels)
}

pub(crate) fn encode_labels(v: &LabelVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(LABEL_HEADER_LEN + 4 * v.len());
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    out.extend_from_slice(&(v.num_classes() as u32).to_le_bytes());
    for &l in v.as_slice() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn save_labels(v: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        let mut text = String::new();
        for l in v.as_slice() {
            text.push_str(&l.to_string());
            text.push('\n');
        }
        text.into_bytes()
    } else {
        encode_labels(v)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
