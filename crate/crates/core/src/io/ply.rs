//! Binary little-endian PLY export of the map point cloud, colored by
//! cluster. A minimal parser is included for round-trip checks.

use super::IoError;
use crate::cluster::SemanticMap;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Deterministic color for a cluster id (0 = unclustered, gray).
fn cluster_color(cluster: Option<u32>) -> [u8; 3] {
    match cluster {
        None => [128, 128, 128],
        Some(id) => {
            // Cheap hash spread over hue-ish values.
            let h = id.wrapping_mul(2654435761);
            [
                (64 + (h & 0x7f) + 64) as u8,
                (64 + ((h >> 8) & 0x7f) + 32) as u8,
                (64 + ((h >> 16) & 0x7f)) as u8,
            ]
        }
    }
}

pub fn write_map_ply(path: &Path, map: &SemanticMap) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        map.points.len()
    );
    w.write_all(header.as_bytes()).map_err(|e| IoError::io(path, e))?;
    for (pid, point) in &map.points {
        for d in 0..3 {
            w.write_f32::<LittleEndian>(point.position[d] as f32)
                .map_err(|e| IoError::io(path, e))?;
        }
        let color = cluster_color(map.cluster_of(*pid));
        w.write_all(&color).map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Parse a PLY written by [`write_map_ply`]: positions and colors.
pub fn read_ply(path: &Path) -> Result<Vec<([f32; 3], [u8; 3])>, IoError> {
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    while !header.ends_with(b"end_header\n") {
        let n = r.read(&mut byte).map_err(|e| IoError::io(path, e))?;
        if n == 0 {
            return Err(IoError::parse(path, "truncated header"));
        }
        header.push(byte[0]);
        if header.len() > 4096 {
            return Err(IoError::parse(path, "oversized header"));
        }
    }
    let header = String::from_utf8_lossy(&header);
    if !header.starts_with("ply\nformat binary_little_endian 1.0\n") {
        return Err(IoError::parse(path, "not a binary little-endian PLY"));
    }
    let count: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .ok_or_else(|| IoError::parse(path, "missing vertex element"))?
        .parse()
        .map_err(|_| IoError::parse(path, "bad vertex count"))?;
    let mut vertices = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pos = [0f32; 3];
        for p in pos.iter_mut() {
            *p = r.read_f32::<LittleEndian>().map_err(|e| IoError::io(path, e))?;
        }
        let mut color = [0u8; 3];
        r.read_exact(&mut color).map_err(|e| IoError::io(path, e))?;
        vertices.push((pos, color));
    }
    Ok(vertices)
}
