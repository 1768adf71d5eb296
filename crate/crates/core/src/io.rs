//! Dataset files.
//!
//! `vecbin`: `b"MRNG"`, version byte `1`, `u32` n, `u32` d, then `n * d`
//! little-endian `f32` values row-major. Files without the magic are read as
//! the headerless per-vector layout used by common benchmark sets: each vector
//! is a little-endian `u32` dimension followed by that many `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MrngError, Result};
use crate::geometry::Dataset;
use crate::scalar::Scalar;

pub const VECBIN_MAGIC: &[u8; 4] = b"MRNG";
pub const VECBIN_VERSION: u8 = 1;

pub fn write_vecbin<T: Scalar>(path: impl AsRef<Path>, data: &Dataset<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_vecbin_to(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn write_vecbin_to<T: Scalar, W: Write>(w: &mut W, data: &Dataset<T>) -> Result<()> {
    w.write_all(VECBIN_MAGIC)?;
    w.write_all(&[VECBIN_VERSION])?;
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    w.write_all(&(data.dim() as u32).to_le_bytes())?;
    for c in data.coords() {
        w.write_all(&(c.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Writes query rows in the vecbin layout. Rows need not be distinct.
pub fn write_queries<T: Scalar>(path: impl AsRef<Path>, rows: &[Vec<T>]) -> Result<()> {
    let d = rows.first().map(Vec::len).unwrap_or(0);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(VECBIN_MAGIC)?;
    w.write_all(&[VECBIN_VERSION])?;
    w.write_all(&(rows.len() as u32).to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    for row in rows {
        if row.len() != d {
            return Err(MrngError::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        for c in row {
            w.write_all(&(c.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset, validating it like [`Dataset::new`].
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset<f32>> {
    let (d, coords) = read_rows(path)?;
    Dataset::new(d, coords)
}

/// Reads raw rows without the distinctness check (for query files).
pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    let (d, coords) = read_rows(path)?;
    Ok(coords.chunks_exact(d).map(<[f32]>::to_vec).collect())
}

fn read_rows(path: impl AsRef<Path>) -> Result<(usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_rows(&bytes)
}

pub fn parse_rows(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    if bytes.len() >= 5 && &bytes[..4] == VECBIN_MAGIC {
        parse_vecbin(bytes)
    } else {
        parse_per_vector(bytes)
    }
}

fn le_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

fn parse_vecbin(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    if bytes[4] != VECBIN_VERSION {
        return Err(MrngError::VersionMismatch {
            found: bytes[4],
            expected: VECBIN_VERSION,
        });
    }
    let truncated = || MrngError::Format("truncated vecbin header".into());
    let n = le_u32(bytes, 5).ok_or_else(truncated)? as usize;
    let d = le_u32(bytes, 9).ok_or_else(truncated)? as usize;
    if n == 0 || d == 0 {
        return Err(MrngError::Format(
            "vecbin with zero rows or zero dimension".into(),
        ));
    }
    let payload = &bytes[13..];
    let expected = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| MrngError::Format("vecbin size overflow".into()))?;
    if payload.len() != expected {
        return Err(MrngError::Format(format!(
            "vecbin payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let coords = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((d, coords))
}

fn parse_per_vector(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    let mut at = 0;
    let mut dim = None;
    let mut coords = Vec::new();
    while at < bytes.len() {
        let d = le_u32(bytes, at)
            .ok_or_else(|| MrngError::Format("truncated vector header".into()))?
            as usize;
        at += 4;
        if d == 0 {
            return Err(MrngError::Format("vector with zero dimension".into()));
        }
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(MrngError::DimensionMismatch {
                    expected: prev,
                    got: d,
                })
            }
            _ => {}
        }
        let body = bytes
            .get(at..at + 4 * d)
            .ok_or_else(|| MrngError::Format("truncated vector payload".into()))?;
        coords.extend(
            body.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
        );
        at += 4 * d;
    }
    let d = dim.ok_or_else(|| MrngError::Format("no vectors in file".into()))?;
    Ok((d, coords))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::generate_uniform_dataset;

    #[test]
    fn vecbin_layout_is_exact() {
        let ds = Dataset::from_rows(&[vec![1.0f32, 2.0], vec![3.0, -4.5]]).unwrap();
        let mut buf = Vec::new();
        write_vecbin_to(&mut buf, &ds).unwrap();
        assert_eq!(&buf[..5], b"MRNG\x01");
        assert_eq!(&buf[5..9], &2u32.to_le_bytes());
        assert_eq!(&buf[9..13], &2u32.to_le_bytes());
        assert_eq!(&buf[13..17], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 13 + 16);
        let (d, coords) = parse_rows(&buf).unwrap();
        assert_eq!(Dataset::new(d, coords).unwrap(), ds);
    }

    #[test]
    fn reads_per_vector_layout() {
        let mut buf = Vec::new();
        for row in [[0.5f32, 1.5, 2.5], [3.0, 4.0, 5.0]] {
            buf.extend_from_slice(&3u32.to_le_bytes());
            for c in row {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        let (d, coords) = parse_rows(&buf).unwrap();
        assert_eq!(d, 3);
        assert_eq!(coords, vec![0.5, 1.5, 2.5, 3.0, 4.0, 5.0]);
        buf.pop();
        assert!(matches!(parse_rows(&buf), Err(MrngError::Format(_))));
    }

    #[test]
    fn rejects_bad_vecbin() {
        let ds: Dataset<f32> = generate_uniform_dataset(4, 3, 9).unwrap();
        let mut buf = Vec::new();
        write_vecbin_to(&mut buf, &ds).unwrap();
        let mut bad_version = buf.clone();
        bad_version[4] = 2;
        assert!(matches!(
            parse_rows(&bad_version),
            Err(MrngError::VersionMismatch { .. })
        ));
        assert!(matches!(
            parse_rows(&buf[..buf.len() - 1]),
            Err(MrngError::Format(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.vecbin");
        let ds: Dataset<f32> = generate_uniform_dataset(30, 7, 3).unwrap();
        write_vecbin(&path, &ds).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }
}
