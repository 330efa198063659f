//! Correspondence CSVs for recorded datasets.
//!
//! `tracks.csv`: one observation per line, `frame,track,u,v`. Feature
//! extraction and matching happen upstream; the back-end only consumes the
//! resulting point tracks. `initial_points.csv`: `track,x,y,z` triangulated
//! initial positions.

use super::IoError;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackObservation {
    pub frame: usize,
    pub track: u32,
    pub u: f64,
    pub v: f64,
}

pub fn write_tracks(path: &Path, obs: &[TrackObservation]) -> Result<(), IoError> {
    let mut out = String::from("frame,track,u,v\n");
    for o in obs {
        writeln!(out, "{},{},{:.6},{:.6}", o.frame, o.track, o.u, o.v).unwrap();
    }
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackObservation>, IoError> {
    let content = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut obs = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("frame")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(IoError::parse(path, format!("line {}: expected 4 fields", lineno + 1)));
        }
        let bad = |e: String| IoError::parse(path, format!("line {}: {e}", lineno + 1));
        obs.push(TrackObservation {
            frame: fields[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            track: fields[1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            u: fields[2].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            v: fields[3].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
        });
    }
    Ok(obs)
}

pub fn write_initial_points(path: &Path, points: &BTreeMap<u32, [f64; 3]>) -> Result<(), IoError> {
    let mut out = String::from("track,x,y,z\n");
    for (track, p) in points {
        writeln!(out, "{},{:.9},{:.9},{:.9}", track, p[0], p[1], p[2]).unwrap();
    }
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

pub fn read_initial_points(path: &Path) -> Result<BTreeMap<u32, [f64; 3]>, IoError> {
    let content = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut points = BTreeMap::new();
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("track")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(IoError::parse(path, format!("line {}: expected 4 fields", lineno + 1)));
        }
        let track: u32 = fields[0]
            .parse()
            .map_err(|_| IoError::parse(path, format!("line {}: bad track id", lineno + 1)))?;
        let mut p = [0.0; 3];
        for (i, f) in fields[1..].iter().enumerate() {
            p[i] = f
                .parse()
                .map_err(|_| IoError::parse(path, format!("line {}: bad coordinate", lineno + 1)))?;
        }
        points.insert(track, p);
    }
    Ok(points)
}
