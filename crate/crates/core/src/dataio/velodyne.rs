//! KITTI-style binary scans: little-endian `f32` records `(x, y, z, intensity)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

const RECORD: usize = 16;

pub fn parse_velodyne(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: format!("length {} bytes is not a multiple of {RECORD}", bytes.len()),
        });
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    let points = bytes
        .chunks_exact(RECORD)
        .map(|r| [f(&r[0..4]), f(&r[4..8]), f(&r[8..12])])
        .collect();
    Ok(PointCloud::new(points))
}

pub fn read_velodyne_scan(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_velodyne(&bytes, path)
}

/// Narrows to `f32` and writes zero intensity.
pub fn encode_velodyne(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD);
    for p in cloud.iter() {
        for v in [p[0] as f32, p[1] as f32, p[2] as f32, 0.0f32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_velodyne_scan(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_velodyne(cloud)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_records_and_empty() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, -1.0, 0.25, 8.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let c = parse_velodyne(&bytes, Path::new("x.bin")).unwrap();
        assert_eq!(c.points, vec![[1.0, 2.0, 3.0], [-1.0, 0.25, 8.0]]);
        assert!(parse_velodyne(&[], Path::new("e.bin")).unwrap().is_empty());
    }

    #[test]
    fn bad_length_names_byte_count() {
        let err = parse_velodyne(&[0u8; 17], Path::new("bad.bin")).unwrap_err();
        assert!(err.to_string().contains("17 bytes"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let c = PointCloud::new(vec![[0.5, -1.25, 3.0], [1e3, 0.0, -7.75]]);
        write_velodyne_scan(&path, &c).unwrap();
        assert_eq!(read_velodyne_scan(&path).unwrap(), c);
    }
}
