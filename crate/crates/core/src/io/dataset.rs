//! Dataset directories: the on-disk ingestion format shared by recorded and
//! exported synthetic runs.
//!
//! Layout:
//! - `intrinsics.toml`: camera intrinsics and class count
//! - `groundtruth.txt`: TUM ground-truth trajectory (optional for recorded data)
//! - `initial_trajectory.txt`: TUM initial pose estimates, one line per frame
//! - `initial_points.csv`: `track,x,y,z` initial point positions
//! - `tracks.csv`: `frame,track,u,v` point-track observations
//! - `seg/NNNNNN_labels.png`, `seg/NNNNNN_instances.png`,
//!   optional `seg/NNNNNN_probs.bin`: per-frame segmentation
//!
//! Descriptors are not stored; a deterministic per-track descriptor is
//! synthesized on load, which preserves the "same track, same descriptor"
//! property the cluster-merge rule relies on.

use super::tracks::{read_initial_points, read_tracks, write_initial_points, write_tracks, TrackObservation};
use super::{seg, tum, IoError};
use crate::cluster::Descriptor;
use crate::eval::Trajectory;
use crate::geometry::{CameraIntrinsics, Pixel, Pose};
use crate::semantics::{InstanceMap, ProbabilityMap};
use crate::sim::{render_frame, GroundTruthBundle, InitialEstimates};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Everything the pipeline needs for one keyframe.
#[derive(Debug, Clone)]
pub struct KeyframeInput {
    pub frame: usize,
    pub timestamp: f64,
    /// Initial camera-from-world pose estimate.
    pub pose_init: Pose,
    pub observations: Vec<(u32, Pixel, Descriptor)>,
    pub pmap: ProbabilityMap,
    pub imap: InstanceMap,
    /// Raw instance id -> class, for the IOU tracker.
    pub raw_class: BTreeMap<u32, usize>,
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct IntrinsicsFile {
    intrinsics: CameraIntrinsics,
    num_classes: usize,
}

/// Majority class label over the pixels of each raw instance.
pub fn derive_raw_classes(labels: &[u16], imap: &InstanceMap) -> BTreeMap<u32, usize> {
    let mut counts: BTreeMap<u32, BTreeMap<u16, usize>> = BTreeMap::new();
    for (&id, &label) in imap.data().iter().zip(labels.iter()) {
        if id != 0 {
            *counts.entry(id).or_default().entry(label).or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .map(|(id, by_label)| {
            let class = by_label
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(label, _)| label as usize)
                .unwrap_or(0);
            (id, class)
        })
        .collect()
}

/// Deterministic stand-in descriptor for a stored track.
pub fn synthetic_track_descriptor(track: u32) -> Descriptor {
    let mut rng = ChaCha8Rng::seed_from_u64(0xdeec_0000u64 ^ (track as u64).wrapping_mul(0x9e3779b97f4a7c15));
    let mut d = [0u8; 32];
    rng.fill(&mut d);
    Descriptor(d)
}

fn seg_paths(dir: &Path, frame: usize) -> (PathBuf, PathBuf, PathBuf) {
    let seg_dir = dir.join("seg");
    (
        seg_dir.join(format!("{frame:06}_labels.png")),
        seg_dir.join(format!("{frame:06}_instances.png")),
        seg_dir.join(format!("{frame:06}_probs.bin")),
    )
}

/// Export a synthetic bundle plus its perturbed initialization as a dataset
/// directory. Every frame gets tracks and segmentation; dense probability
/// files are written when `write_probs` is set.
pub fn write_dataset(
    dir: &Path,
    bundle: &GroundTruthBundle,
    init: &InitialEstimates,
    write_probs: bool,
) -> Result<(), IoError> {
    std::fs::create_dir_all(dir.join("seg")).map_err(|e| IoError::io(dir, e))?;

    let meta = IntrinsicsFile {
        intrinsics: bundle.spec.intrinsics,
        num_classes: bundle.num_classes,
    };
    let meta_path = dir.join("intrinsics.toml");
    std::fs::write(
        &meta_path,
        toml::to_string_pretty(&meta).expect("intrinsics serialize"),
    )
    .map_err(|e| IoError::io(&meta_path, e))?;

    let gt = Trajectory::new(
        bundle
            .timestamps
            .iter()
            .zip(bundle.poses.iter())
            .map(|(t, p)| (*t, p.inverse()))
            .collect(),
    )
    .expect("monotonic timestamps");
    tum::write_trajectory(&dir.join("groundtruth.txt"), &gt)?;

    let init_traj = Trajectory::new(
        bundle
            .timestamps
            .iter()
            .zip(init.poses.iter())
            .map(|(t, p)| (*t, p.inverse()))
            .collect(),
    )
    .expect("monotonic timestamps");
    tum::write_trajectory(&dir.join("initial_trajectory.txt"), &init_traj)?;

    let points: BTreeMap<u32, [f64; 3]> = init
        .points
        .iter()
        .map(|(id, p)| (*id, [p[0], p[1], p[2]]))
        .collect();
    write_initial_points(&dir.join("initial_points.csv"), &points)?;

    let mut all_tracks = Vec::new();
    for frame in 0..bundle.poses.len() {
        let render = render_frame(bundle, frame, &bundle.spec.noise);
        for obs in &render.observations {
            all_tracks.push(TrackObservation {
                frame,
                track: obs.point_id,
                u: obs.pixel.u,
                v: obs.pixel.v,
            });
        }
        let (labels_path, instances_path, probs_path) = seg_paths(dir, frame);
        // Reconstruct the label image from the probability map argmax.
        let w = render.pmap.width() as usize;
        let h = render.pmap.height() as usize;
        let c = render.pmap.num_classes();
        let labels: Vec<u16> = render
            .pmap
            .raw_data()
            .chunks(c)
            .map(|px| {
                let mut best = 0usize;
                for (i, &v) in px.iter().enumerate() {
                    if v > px[best] {
                        best = i;
                    }
                }
                best as u16
            })
            .collect();
        debug_assert_eq!(labels.len(), w * h);
        seg::write_label_png(&labels_path, &labels, render.pmap.width(), render.pmap.height())?;
        seg::write_instance_png(&instances_path, &render.imap)?;
        if write_probs {
            seg::write_probability_bin(&probs_path, &render.pmap)?;
        }
    }
    write_tracks(&dir.join("tracks.csv"), &all_tracks)?;
    Ok(())
}

/// A loaded dataset directory.
#[derive(Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub num_classes: usize,
    pub initial_trajectory: Trajectory,
    pub groundtruth: Option<Trajectory>,
    pub initial_points: BTreeMap<u32, Vector3<f64>>,
    tracks_by_frame: BTreeMap<usize, Vec<TrackObservation>>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let meta_path = dir.join("intrinsics.toml");
        let meta: IntrinsicsFile = toml::from_str(
            &std::fs::read_to_string(&meta_path).map_err(|e| IoError::io(&meta_path, e))?,
        )
        .map_err(|e| IoError::parse(&meta_path, e.to_string()))?;

        let initial_trajectory = tum::read_trajectory(&dir.join("initial_trajectory.txt"))?;
        let gt_path = dir.join("groundtruth.txt");
        let groundtruth = if gt_path.exists() {
            Some(tum::read_trajectory(&gt_path)?)
        } else {
            None
        };
        let initial_points = read_initial_points(&dir.join("initial_points.csv"))?
            .into_iter()
            .map(|(id, p)| (id, Vector3::from(p)))
            .collect();
        let mut tracks_by_frame: BTreeMap<usize, Vec<TrackObservation>> = BTreeMap::new();
        for obs in read_tracks(&dir.join("tracks.csv"))? {
            tracks_by_frame.entry(obs.frame).or_default().push(obs);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            intrinsics: meta.intrinsics,
            num_classes: meta.num_classes,
            initial_trajectory,
            groundtruth,
            initial_points,
            tracks_by_frame,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.initial_trajectory.frames.len()
    }

    /// Assemble the pipeline input for one frame. The probability map comes
    /// from the dense file when present, otherwise it is synthesized from
    /// the label image with confidence `alpha`.
    pub fn keyframe_input(&self, frame: usize, alpha: f64) -> Result<KeyframeInput, IoError> {
        let (labels_path, instances_path, probs_path) = seg_paths(&self.dir, frame);
        let (labels, w, h) = seg::read_label_png(&labels_path)?;
        let imap = seg::read_instance_png(&instances_path)?;
        let pmap = if probs_path.exists() {
            seg::read_probability_bin(&probs_path)?
        } else {
            ProbabilityMap::from_labels(&labels, w, h, self.num_classes, alpha)
                .map_err(|e| IoError::parse(&labels_path, e.to_string()))?
        };
        let raw_class = derive_raw_classes(&labels, &imap);
        let (timestamp, pose_wc) = self.initial_trajectory.frames[frame];
        let observations = self
            .tracks_by_frame
            .get(&frame)
            .map(|tracks| {
                tracks
                    .iter()
                    .map(|t| {
                        (
                            t.track,
                            Pixel::new(t.u, t.v),
                            synthetic_track_descriptor(t.track),
                        )
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(KeyframeInput {
            frame,
            timestamp,
            pose_init: pose_wc.inverse(),
            observations,
            pmap,
            imap,
            raw_class,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClassInfo, ClassTable};
    use crate::sim::{generate_scene, perturb_initialization, NoiseSpec, PlanarObjectSpec, SceneSpec, TrajectorySpec, Waypoint};

    fn classes() -> ClassTable {
        ClassTable {
            classes: vec![
                ClassInfo { name: "bg".into(), planar: false, stuff: true },
                ClassInfo { name: "table".into(), planar: true, stuff: false },
            ],
        }
    }

    fn small_spec() -> SceneSpec {
        SceneSpec {
            planar_objects: vec![PlanarObjectSpec {
                class: 1,
                plane: [0.0, 0.0, 1.0, 0.0],
                center: [0.0, 0.0, 0.0],
                half_extent: [0.5, 0.5],
                count: 40,
            }],
            clutter: vec![],
            intrinsics: CameraIntrinsics::new(120.0, 120.0, 80.0, 60.0, 160, 120).unwrap(),
            trajectory: TrajectorySpec {
                waypoints: vec![
                    Waypoint { position: [0.0, -1.0, 1.0], look_at: [0.0, 0.0, 0.0] },
                    Waypoint { position: [0.3, -1.0, 1.0], look_at: [0.0, 0.0, 0.0] },
                ],
                frames: 4,
                dt: 0.1,
            },
            noise: NoiseSpec::none(),
        }
    }

    #[test]
    fn dataset_round_trip() {
        let classes = classes();
        let bundle = generate_scene(&small_spec(), &classes, 11).unwrap();
        let init = perturb_initialization(&bundle, 0.01, 0.5, 0.005, 11);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &bundle, &init, true).unwrap();

        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.num_frames(), 4);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.initial_points.len(), 40);
        assert!(ds.groundtruth.is_some());

        let kf = ds.keyframe_input(0, 0.9).unwrap();
        assert!(!kf.observations.is_empty());
        // Raw class of the rendered instance is the table class.
        assert!(kf.raw_class.values().all(|&c| c == 1));
        // Probability file round-trips through the dense path.
        let from_probs = kf.pmap;
        let obs_px = kf.observations[0].1;
        assert_eq!(from_probs.pixel_distribution(&obs_px).unwrap().argmax(), 1);
        // Same track id, same synthesized descriptor.
        assert_eq!(synthetic_track_descriptor(5), synthetic_track_descriptor(5));
    }
}
