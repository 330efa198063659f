//! TUM trajectory format: ASCII lines `timestamp tx ty tz qx qy qz qw`,
//! space separated, quaternion in (x, y, z, w) order, poses world-from-camera.

use super::IoError;
use crate::eval::Trajectory;
use crate::geometry::Pose;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::fmt::Write as _;
use std::path::Path;

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (t, pose) in &traj.frames {
        let p = pose.translation;
        let q = pose.rotation.quaternion();
        writeln!(
            out,
            "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            t, p[0], p[1], p[2], q.i, q.j, q.k, q.w
        )
        .unwrap();
    }
    out
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    std::fs::write(path, format_trajectory(traj)).map_err(|e| IoError::io(path, e))
}

pub fn parse_trajectory(path: &Path, content: &str) -> Result<Trajectory, IoError> {
    let mut frames = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::parse(path, format!("line {}: {e}", lineno + 1)))?;
        if fields.len() != 8 {
            return Err(IoError::parse(
                path,
                format!("line {}: expected 8 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let rotation = UnitQuaternion::from_quaternion(Quaternion::new(
            fields[7], fields[4], fields[5], fields[6],
        ));
        frames.push((
            fields[0],
            Pose::new(rotation, Vector3::new(fields[1], fields[2], fields[3])),
        ));
    }
    Trajectory::new(frames).map_err(|e| IoError::parse(path, e.to_string()))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let content = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_trajectory(path, &content)
}
