//! Depth sidecar files: the magic `DSSLDPT1`, little-endian `u32` height
//! and width, then `H·W` little-endian `f32` disparities in row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{io_err, DataError, Result};
use crate::geometry::DepthMap;

const MAGIC: &[u8; 8] = b"DSSLDPT1";

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let (h, w) = depth.dim();
    let mut out = Vec::with_capacity(16 + 4 * h * w);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in depth.values().iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let arr = decode_raw(bytes, path)?;
    DepthMap::new(arr).map_err(|e| DataError::Format { path: path.to_path_buf(), detail: e.to_string() })
}

/// Decodes a sidecar without the `[0, 1]` range check.
pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let bad = |detail: String| DataError::Format { path: path.to_path_buf(), detail };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a depth sidecar".into()));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * h * w {
        return Err(bad(format!("expected {} bytes of data for {h}x{w}, found {}", 4 * h * w, body.len())));
    }
    let values: Vec<f64> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    Ok(Array2::from_shape_vec((h, w), values).expect("sized"))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_depth(&bytes, path)
}

/// Writes `depth` as `f32`; values round to the nearest `f32`.
pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    fs::write(path, encode_depth(depth)).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let d = DepthMap::new(Array2::from_shape_fn((3, 5), |(y, x)| (y * 5 + x) as f64 / 14.0)).unwrap();
        let a = dir.path().join("a.dpt");
        let b = dir.path().join("b.dpt");
        write_depth(&a, &d).unwrap();
        write_depth(&b, &read_depth(&a).unwrap()).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(fs::read(&a).unwrap().len(), 16 + 60);
    }

    #[test]
    fn rejects_bad_files() {
        let p = Path::new("x.dpt");
        assert!(decode_depth(b"DSSLDPT0aaaaaaaa", p).is_err());
        let mut bytes = encode_depth(&DepthMap::zeros(2, 2));
        bytes.pop();
        assert!(decode_depth(&bytes, p).is_err());
        let mut bytes = encode_depth(&DepthMap::zeros(1, 1));
        bytes[16..20].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(decode_depth(&bytes, p).is_err());
    }
}
