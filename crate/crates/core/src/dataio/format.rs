//! Little-endian binary containers.
//!
//! | file | magic  | header            | payload                               |
//! |------|--------|-------------------|---------------------------------------|
//! | cube | `HSC1` | u32 n, m, f       | n·m·f f64, voxel-major                |
//! | label| `HSL1` | u32 n, m          | n·m u32 class ids, same voxel order   |
//! | dict | `HSD1` | u32 f, d          | f·d f64, column-major                 |

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{HsCube, LabelMap};
use crate::dictlearn::{Dictionary, Provenance};
use crate::error::Result;
use crate::matcore::Mat;

pub const CUBE_MAGIC: [u8; 4] = *b"HSC1";
pub const LABEL_MAGIC: [u8; 4] = *b"HSL1";
pub const DICT_MAGIC: [u8; 4] = *b"HSD1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("declared dimensions {dims:?} overflow the addressable size")]
    DimensionOverflow { dims: Vec<u32> },

    #[error("{extra} unexpected trailing bytes")]
    TrailingBytes { extra: usize },

    #[error("non-finite value at payload index {index}")]
    NonFinite { index: usize },

    #[error("zero dimension in header {dims:?}")]
    ZeroDimension { dims: Vec<u32> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
}

fn header(magic: [u8; 4], dims: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len());
    out.extend_from_slice(&magic);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

fn to_u32(v: usize) -> std::result::Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::DimensionOverflow { dims: vec![u32::MAX] })
}

/// Validates magic and header, returning the dimensions and the payload slice
/// of exactly `count(dims) · elem` bytes.
fn parse<'a>(
    bytes: &'a [u8],
    magic: [u8; 4],
    ndims: usize,
    elem: usize,
) -> std::result::Result<(Vec<u32>, &'a [u8]), FormatError> {
    let head = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(FormatError::Truncated { expected: head, actual: bytes.len() });
    }
    if bytes[..4] != magic {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(&magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    if bytes.len() < head {
        return Err(FormatError::Truncated { expected: head, actual: bytes.len() });
    }
    let dims: Vec<u32> = bytes[4..head]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if dims.contains(&0) {
        return Err(FormatError::ZeroDimension { dims });
    }
    let payload = dims
        .iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|p| p.checked_add(head).map(|_| p))
        .ok_or_else(|| FormatError::DimensionOverflow { dims: dims.clone() })?;
    let expected = head + payload;
    if bytes.len() < expected {
        return Err(FormatError::Truncated { expected, actual: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes { extra: bytes.len() - expected });
    }
    Ok((dims, &bytes[head..]))
}

fn decode_f64(payload: &[u8]) -> std::result::Result<Vec<f64>, FormatError> {
    payload
        .chunks_exact(8)
        .enumerate()
        .map(|(i, c)| {
            let v = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(FormatError::NonFinite { index: i })
            }
        })
        .collect()
}

fn encode_f64(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn cube_to_bytes(cube: &HsCube) -> Result<Vec<u8>> {
    let (n, m, f) = cube.dims();
    let mut out = header(CUBE_MAGIC, &[to_u32(n)?, to_u32(m)?, to_u32(f)?]);
    encode_f64(&mut out, cube.voxels());
    Ok(out)
}

pub fn cube_from_bytes(bytes: &[u8]) -> Result<HsCube> {
    let (dims, payload) = parse(bytes, CUBE_MAGIC, 3, 8)?;
    let voxels = decode_f64(payload)?;
    HsCube::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, voxels)
}

pub fn labels_to_bytes(labels: &LabelMap) -> Result<Vec<u8>> {
    let (n, m) = labels.dims();
    let mut out = header(LABEL_MAGIC, &[to_u32(n)?, to_u32(m)?]);
    for c in labels.class_ids() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    Ok(out)
}

pub fn labels_from_bytes(bytes: &[u8]) -> Result<LabelMap> {
    let (dims, payload) = parse(bytes, LABEL_MAGIC, 2, 4)?;
    let ids = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    LabelMap::new(dims[0] as usize, dims[1] as usize, ids)
}

pub fn dict_to_bytes(dict: &Mat) -> Result<Vec<u8>> {
    let mut out = header(DICT_MAGIC, &[to_u32(dict.rows())?, to_u32(dict.cols())?]);
    encode_f64(&mut out, dict.as_slice());
    Ok(out)
}

/// Loads a dictionary; provenance is not stored on disk, so it comes back as
/// `External` with the unit-column flag recomputed.
pub fn dict_from_bytes(bytes: &[u8]) -> Result<Dictionary> {
    let (dims, payload) = parse(bytes, DICT_MAGIC, 2, 8)?;
    let mat = Mat::from_col_major(dims[0] as usize, dims[1] as usize, decode_f64(payload)?)?;
    Ok(Dictionary::new(mat, Provenance::External))
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::File { path: path.display().to_string(), source }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path).map_err(file_error(path))?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    Ok(fs::write(path, bytes).map_err(file_error(path))?)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsCube> {
    cube_from_bytes(&read_bytes(path.as_ref())?)
}

pub fn write_cube(path: impl AsRef<Path>, cube: &HsCube) -> Result<()> {
    write_bytes(path.as_ref(), &cube_to_bytes(cube)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    labels_from_bytes(&read_bytes(path.as_ref())?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_bytes(path.as_ref(), &labels_to_bytes(labels)?)
}

pub fn read_dict(path: impl AsRef<Path>) -> Result<Dictionary> {
    dict_from_bytes(&read_bytes(path.as_ref())?)
}

pub fn write_dict(path: impl AsRef<Path>, dict: &Mat) -> Result<()> {
    write_bytes(path.as_ref(), &dict_to_bytes(dict)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn sample_cube() -> HsCube {
        HsCube::from_fn(3, 2, 4, |i, j, b| (i as f64 - 1.5) * 0.25 + j as f64 * 3.0 + b as f64 * 1e-3)
            .unwrap()
    }

    #[test]
    fn cube_round_trip_is_exact() {
        let c = sample_cube();
        let bytes = cube_to_bytes(&c).unwrap();
        assert_eq!(&bytes[..4], b"HSC1");
        assert_eq!(bytes.len(), 16 + 3 * 2 * 4 * 8);
        assert_eq!(cube_from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn wrong_magic_is_reported() {
        let mut bytes = cube_to_bytes(&sample_cube()).unwrap();
        bytes[3] = b'9';
        assert!(matches!(
            cube_from_bytes(&bytes),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
        // a label file is not a cube
        let l = labels_to_bytes(&LabelMap::new(1, 1, vec![2]).unwrap()).unwrap();
        assert!(matches!(cube_from_bytes(&l), Err(Error::Format(FormatError::BadMagic { .. }))));
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let bytes = cube_to_bytes(&sample_cube()).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match cube_from_bytes(cut) {
            Err(Error::Format(FormatError::Truncated { expected, actual })) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 5);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
        match cube_from_bytes(&bytes[..10]) {
            Err(Error::Format(FormatError::Truncated { expected: 16, actual: 10 })) => {}
            other => panic!("expected header truncation, got {other:?}"),
        }
    }

    #[test]
    fn overflowing_header_is_rejected() {
        let mut bytes = header(CUBE_MAGIC, &[u32::MAX, u32::MAX, u32::MAX]);
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(
            cube_from_bytes(&bytes),
            Err(Error::Format(FormatError::DimensionOverflow { .. }))
        ));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let mut bytes = header(DICT_MAGIC, &[1, 2]);
        encode_f64(&mut bytes, &[1.0, f64::NAN]);
        assert!(matches!(
            dict_from_bytes(&bytes),
            Err(Error::Format(FormatError::NonFinite { index: 1 }))
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = labels_to_bytes(&LabelMap::new(1, 2, vec![3, 4]).unwrap()).unwrap();
        bytes.push(0);
        assert!(matches!(
            labels_from_bytes(&bytes),
            Err(Error::Format(FormatError::TrailingBytes { extra: 1 }))
        ));
    }

    #[test]
    fn labels_and_dict_round_trip() {
        let l = LabelMap::new(2, 3, vec![0, 1, 16, 16, 2, 0]).unwrap();
        assert_eq!(labels_from_bytes(&labels_to_bytes(&l).unwrap()).unwrap(), l);
        let d = Mat::from_rows(&[&[0.6, 1.0], &[0.8, 0.0]]).unwrap();
        let back = dict_from_bytes(&dict_to_bytes(&d).unwrap()).unwrap();
        assert_eq!(back.mat(), &d);
        assert!(back.unit_columns());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsc");
        write_cube(&p, &sample_cube()).unwrap();
        assert_eq!(read_cube(&p).unwrap(), sample_cube());
        assert!(matches!(
            read_cube(dir.path().join("missing.hsc")),
            Err(Error::Format(FormatError::File { .. }))
        ));
    }
}
