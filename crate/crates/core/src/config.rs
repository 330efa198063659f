//! Run configuration and class-table files (TOML).
//!
//! A run config points at either a scene spec (synthetic input) or a dataset
//! directory (recorded input), selects the estimator mode and seeds, and
//! overrides pipeline / solver parameters. The class table lists every class
//! id with its name, planarity and stuff/thing flags, plus optional per-class
//! minimum inlier counts for plane acceptance.

use crate::ba::BAConfig;
use crate::cluster::{ClassInfo, ClassTable, DEFAULT_TAU_MERGE};
use crate::plane_fit::RansacConfig;
use crate::semantics::PROB_FLOOR;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Read(String, std::io::Error),
    #[error("cannot parse {0}: {1}")]
    Parse(String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Estimator variant: with or without the point-plane regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Plain,
    Planar,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Mode::Plain),
            "planar" => Ok(Mode::Planar),
            other => Err(format!("unknown mode '{other}' (expected plain|planar)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Plain => "plain",
            Mode::Planar => "planar",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputConfig {
    /// Path to a scene spec TOML (synthetic input).
    pub scene: Option<PathBuf>,
    /// Path to a dataset directory (recorded input).
    pub dataset: Option<PathBuf>,
    /// Path to the class table TOML.
    pub classes: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output directory for artifacts.
    pub out: PathBuf,
}

fn default_mode() -> Mode {
    Mode::Planar
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Every Nth frame becomes a keyframe.
    pub keyframe_every: usize,
    /// Sliding window size for local bundle adjustment, keyframes.
    pub window: usize,
    /// Confidence used when synthesizing distributions from hard labels.
    pub alpha: f64,
    /// Cluster-merge centroid distance threshold, meters.
    pub tau_merge: f64,
    /// Refit an accepted plane after this many new member points.
    pub refit_interval: usize,
    /// Initialization noise bounds for synthetic runs.
    pub init_pose_noise_m: f64,
    pub init_pose_noise_deg: f64,
    pub init_point_noise_m: f64,
    /// Export dense probability files when writing datasets.
    pub write_probs: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keyframe_every: 5,
            window: 10,
            alpha: 0.9,
            tau_merge: DEFAULT_TAU_MERGE,
            refit_interval: 10,
            init_pose_noise_m: 0.05,
            init_pose_noise_deg: 2.0,
            init_point_noise_m: 0.05,
            write_probs: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub ba: BAConfig,
    #[serde(default)]
    pub ransac: RansacConfig,
}

/// One class-table entry as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: usize,
    pub name: String,
    #[serde(default)]
    pub planar: bool,
    #[serde(default)]
    pub stuff: bool,
    /// Optional per-class minimum inlier count for plane acceptance.
    pub min_inliers: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassFile {
    pub class: Vec<ClassEntry>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Read(path.display().to_string(), e))?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse(path.display().to_string(), e.to_string()))
}

/// Load and validate a class table. Ids must be dense starting at 0; id 0 is
/// the background/void class.
pub fn load_class_table(path: &Path) -> Result<(ClassTable, BTreeMap<usize, usize>), ConfigError> {
    let file: ClassFile = read_toml(path)?;
    let mut entries = file.class;
    entries.sort_by_key(|e| e.id);
    let mut classes = Vec::with_capacity(entries.len());
    let mut min_inliers = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        if e.id != i {
            return Err(ConfigError::Invalid(format!(
                "class ids must be dense from 0; found id {} at position {i}",
                e.id
            )));
        }
        if let Some(m) = e.min_inliers {
            if !e.planar {
                return Err(ConfigError::Invalid(format!(
                    "class '{}' has min_inliers but is not planar",
                    e.name
                )));
            }
            min_inliers.insert(e.id, m);
        }
        classes.push(ClassInfo {
            name: e.name.clone(),
            planar: e.planar,
            stuff: e.stuff,
        });
    }
    if classes.is_empty() {
        return Err(ConfigError::Invalid("class table is empty".into()));
    }
    Ok((ClassTable { classes }, min_inliers))
}

/// Fully resolved run setup.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub run: RunConfig,
    pub classes: ClassTable,
    pub ransac: RansacConfig,
}

/// Load a run config, its class table, and fold per-class minimum inlier
/// counts into the RANSAC settings. Paths inside the config are resolved
/// relative to the config file's directory.
pub fn load_run_config(path: &Path) -> Result<ResolvedConfig, ConfigError> {
    let mut run: RunConfig = read_toml(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &PathBuf| -> PathBuf {
        if p.is_absolute() {
            p.clone()
        } else {
            base.join(p)
        }
    };
    run.input.classes = resolve(&run.input.classes);
    run.input.out = resolve(&run.input.out);
    if let Some(s) = &run.input.scene {
        run.input.scene = Some(resolve(s));
    }
    if let Some(d) = &run.input.dataset {
        run.input.dataset = Some(resolve(d));
    }

    match (&run.input.scene, &run.input.dataset) {
        (None, None) => {
            return Err(ConfigError::Invalid(
                "input needs either 'scene' or 'dataset'".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(ConfigError::Invalid(
                "input has both 'scene' and 'dataset'; pick one".into(),
            ))
        }
        _ => {}
    }
    if run.input.seeds.is_empty() {
        return Err(ConfigError::Invalid("seeds list is empty".into()));
    }
    validate_numeric(&run)?;

    let (classes, min_inliers) = load_class_table(&run.input.classes)?;
    let mut ransac = run.ransac.clone();
    ransac.class_min_inliers = min_inliers;
    Ok(ResolvedConfig { run, classes, ransac })
}

fn validate_numeric(run: &RunConfig) -> Result<(), ConfigError> {
    let p = &run.pipeline;
    if p.keyframe_every == 0 || p.window == 0 {
        return Err(ConfigError::Invalid(
            "keyframe_every and window must be positive".into(),
        ));
    }
    if !(PROB_FLOOR..=1.0).contains(&p.alpha) {
        return Err(ConfigError::Invalid(format!("alpha {} outside (0,1]", p.alpha)));
    }
    if p.tau_merge <= 0.0 {
        return Err(ConfigError::Invalid("tau_merge must be positive".into()));
    }
    if run.ba.pixel_sigma <= 0.0 || run.ba.plane_sigma <= 0.0 {
        return Err(ConfigError::Invalid("BA sigmas must be positive".into()));
    }
    if run.ransac.threshold_m <= 0.0 || !(0.0..1.0).contains(&(1.0 - run.ransac.confidence)) {
        return Err(ConfigError::Invalid("invalid RANSAC settings".into()));
    }
    Ok(())
}
