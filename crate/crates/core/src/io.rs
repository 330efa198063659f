//! File formats: TUM trajectories, segmentation ingestion, correspondence
//! CSVs, PLY point clouds, map export and dataset directories.

pub mod dataset;
pub mod ply;
pub mod seg;
pub mod tracks;
pub mod tum;

use sha2::{Digest, Sha256};
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("image error on {1}: {0}")]
    Image(image::ImageError, String),
}

impl IoError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &Path, message: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

/// Hex SHA-256 of a file, for the export manifest.
pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}
