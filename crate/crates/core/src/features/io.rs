//! SSRF feature files: `"SSRF"`, version `u32 = 1`, dtype `u32 = 1` (float32),
//! rows `u64`, cols `u64`, then `rows * cols` float32 values in row-major
//! order. All integers and floats are little-endian.

use std::path::Path;

use nalgebra::DMatrix;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const SSRF_MAGIC: &[u8; 4] = b"SSRF";
pub const SSRF_VERSION: u32 = 1;
const DTYPE_F32: u32 = 1;

/// One descriptor per row.
pub type FeatureMatrix = DMatrix<f64>;

pub fn encode_feature_matrix(m: &FeatureMatrix) -> Result<Vec<u8>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    let mut w = Writer::new(SSRF_MAGIC, SSRF_VERSION);
    w.u32(DTYPE_F32);
    w.u64(m.nrows() as u64);
    w.u64(m.ncols() as u64);
    for r in 0..m.nrows() {
        w.f32s(m.row(r).iter().copied());
    }
    Ok(w.finish())
}

pub fn decode_feature_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = Reader::open(bytes, SSRF_MAGIC, SSRF_VERSION)?;
    let dtype = r.u32()?;
    if dtype != DTYPE_F32 {
        return Err(Error::Unsupported {
            what: "dtype",
            expected: DTYPE_F32,
            found: dtype,
        });
    }
    let rows = r.usize("row count")?;
    let cols = r.usize("column count")?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Malformed(format!("{rows}x{cols} overflows")))?;
    let values = r.f32s(count, "feature payload")?;
    r.expect_end()?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_feature_file(path: &Path, m: &FeatureMatrix) -> Result<()> {
    let bytes = encode_feature_matrix(m)?;
    binio::write_atomic(path, &bytes).map_err(|e| e.at_path(path))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let bytes = binio::read_file(path)?;
    decode_feature_matrix(&bytes).map_err(|e| e.at_path(path))
}

/// Parses comma-separated features with a header row (`dim0,dim1,...`).
pub fn read_csv_features(text: &str) -> Result<FeatureMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Malformed("empty CSV".into()))?;
    let cols = header.split(',').count();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Malformed(format!("CSV line {}: cannot parse {field:?}", i + 2))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("CSV line {}", i + 2)));
            }
            values.push(v);
        }
        if values.len() - before != cols {
            return Err(Error::DimensionMismatch {
                context: "CSV row width",
                expected: cols,
                found: values.len() - before,
            });
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(rows: u64, cols: u64) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"SSRF");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&rows.to_le_bytes());
        b.extend_from_slice(&cols.to_le_bytes());
        b
    }

    #[test]
    fn decodes_two_by_three() {
        let mut b = header(2, 3);
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_feature_matrix(&b).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(m[(0, 2)], 3.0);
    }

    #[test]
    fn distinct_error_kinds() {
        let mut b = header(2, 3);
        b.extend_from_slice(&[0u8; 5 * 4]);
        assert!(matches!(decode_feature_matrix(&b), Err(Error::Truncated { .. })));

        let mut bad = header(1, 1);
        bad[0] = b'X';
        bad.extend_from_slice(&1f32.to_le_bytes());
        assert!(matches!(decode_feature_matrix(&bad), Err(Error::BadMagic { .. })));

        let mut nan = header(1, 1);
        nan.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_feature_matrix(&nan), Err(Error::NonFinite(_))));

        let mut extra = header(1, 1);
        extra.extend_from_slice(&[0u8; 8]);
        assert!(matches!(decode_feature_matrix(&extra), Err(Error::Malformed(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ssrf");
        let m = DMatrix::from_row_slice(2, 2, &[0.25, -1.5, 3.0, 1e-3]);
        write_feature_file(&path, &m).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back, m.map(|v| v as f32 as f64));
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(encode_feature_matrix(&back).unwrap(), bytes);
    }

    #[test]
    fn csv_import() {
        let m = read_csv_features("dim0,dim1\n1,2\n3.5,-4\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.5, -4.0]));
        assert!(read_csv_features("dim0,dim1\n1\n").is_err());
        assert!(read_csv_features("dim0\nabc\n").is_err());
    }

    proptest! {
        #[test]
        fn byte_round_trip_is_exact(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let mut s = seed;
            let vals: Vec<f64> = (0..rows * cols).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f32 / 1e6 - 2000.0) as f64
            }).collect();
            let m = DMatrix::from_row_slice(rows, cols, &vals);
            let bytes = encode_feature_matrix(&m).unwrap();
            let back = decode_feature_matrix(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode_feature_matrix(&back).unwrap(), bytes);
        }
    }
}
