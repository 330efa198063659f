//! End-to-end back-end pipeline.
//!
//! Per keyframe: track raw instance ids to persistent ids, fuse segmentation
//! into map points, maintain the cluster partition, fit/refit cluster planes,
//! and run windowed bundle adjustment. A global adjustment runs whenever a
//! plane is newly accepted and once at the end. The `plain` mode runs the
//! identical schedule with the point-plane factors excluded from the
//! optimization, so mode comparisons differ only in the regularizer.

use crate::ba::{
    build_problem, gate_outliers, optimize_lm, BAError, BAProblem, TraceRow, Window,
};
use crate::cluster::{ClusterError, MapPoint, Observation, SemanticMap};
use crate::cluster::ClassTable;
use crate::config::{Mode, PipelineConfig};
use crate::ba::BAConfig;
use crate::eval::{ate_rmse, EvalError, Trajectory, DEFAULT_MAX_DT};
use crate::geometry::CameraIntrinsics;
use crate::io::dataset::{Dataset, KeyframeInput};
use crate::io::{dataset, ply, tum, IoError};
use crate::plane_fit::{accept_plane, prune_far_points, ransac_plane, RansacConfig};
use crate::semantics::InstanceTracker;
use crate::sim::{render_frame, GroundTruthBundle, InitialEstimates};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Minimum |cos| between a fitted plane normal and the mean viewing
/// direction for the plane to count as observable.
pub const MIN_VIEW_COSINE: f64 = 0.3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no keyframe inputs")]
    EmptyInput,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Ba(#[from] BAError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// All knobs for one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineParams {
    pub mode: Mode,
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub ba: BAConfig,
    pub ransac: RansacConfig,
}

/// A fitted cluster plane, for export and evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneSummary {
    pub cluster: u32,
    pub class: usize,
    pub instance: u32,
    /// Normalized coefficients (a, b, c, d).
    pub coefficients: [f64; 4],
    pub inliers: usize,
    pub inlier_rms: f64,
    pub members: usize,
    pub pruned: usize,
}

/// Machine-readable run summary. Deliberately contains no wall-clock data so
/// repeated runs serialize byte-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub seed: u64,
    pub num_keyframes: usize,
    pub num_points: usize,
    pub num_clusters: usize,
    pub num_accepted_planes: usize,
    pub skipped_tracks: usize,
    pub repaired_points: usize,
    pub merged_clusters: usize,
    pub ba_failures: usize,
    pub gated_plane_factors: usize,
    pub final_cost: f64,
    pub ate_rmse: Option<f64>,
    pub initial_ate_rmse: Option<f64>,
}

/// One BA invocation's LM trace.
#[derive(Debug, Clone)]
pub struct TraceBlock {
    pub label: String,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug)]
pub struct RunResult {
    pub map: SemanticMap,
    /// Estimated keyframe trajectory, world-from-camera.
    pub trajectory: Trajectory,
    pub planes: Vec<PlaneSummary>,
    pub report: RunReport,
    pub traces: Vec<TraceBlock>,
}

/// Assemble keyframe inputs directly from a synthetic bundle (the in-memory
/// twin of the dataset path).
pub fn keyframe_inputs_from_bundle(
    bundle: &GroundTruthBundle,
    init: &InitialEstimates,
    keyframe_every: usize,
) -> Vec<KeyframeInput> {
    let mut inputs = Vec::new();
    for frame in (0..bundle.poses.len()).step_by(keyframe_every.max(1)) {
        let render = render_frame(bundle, frame, &bundle.spec.noise);
        inputs.push(KeyframeInput {
            frame,
            timestamp: bundle.timestamps[frame],
            pose_init: init.poses[frame],
            observations: render
                .observations
                .iter()
                .map(|o| (o.point_id, o.pixel, o.descriptor))
                .collect(),
            pmap: render.pmap,
            imap: render.imap,
            raw_class: render.raw_class,
        });
    }
    inputs
}

/// Assemble keyframe inputs from a dataset directory.
pub fn keyframe_inputs_from_dataset(
    ds: &Dataset,
    keyframe_every: usize,
    alpha: f64,
) -> Result<Vec<KeyframeInput>, IoError> {
    (0..ds.num_frames())
        .step_by(keyframe_every.max(1))
        .map(|frame| ds.keyframe_input(frame, alpha))
        .collect()
}

fn write_back(map: &mut SemanticMap, problem: &BAProblem) {
    for (id, pose) in &problem.poses {
        if let Some(kf) = map.keyframes.get_mut(id) {
            kf.pose = *pose;
        }
    }
    for (id, pos) in &problem.points {
        if let Some(p) = map.points.get_mut(id) {
            p.position = *pos;
        }
    }
}

struct BaOutcome {
    gated: usize,
    final_cost: f64,
    failed: bool,
}

fn run_ba(
    map: &mut SemanticMap,
    window: Window,
    intrinsics: &CameraIntrinsics,
    params: &PipelineParams,
    max_iterations: usize,
    include_planes: bool,
    label: String,
    traces: &mut Vec<TraceBlock>,
) -> Result<Option<BaOutcome>, PipelineError> {
    let include_planes = include_planes && params.mode == Mode::Planar;
    let mut problem = build_problem(map, &window, intrinsics, include_planes)?;
    if problem.poses.len() < 2 {
        return Ok(None);
    }
    // Two gate/optimize rounds: after the first round has moved the geometry,
    // the chi-squared decisions are re-taken on the improved state, which
    // both re-admits factors gated off a bad initialization and drops
    // constraints that only looked consistent before convergence.
    let mut gated = 0;
    let mut final_cost = f64::NAN;
    for round in 0..2 {
        gated = gate_outliers(&mut problem, &params.ba).len();
        match optimize_lm(&mut problem, &params.ba, max_iterations) {
            Ok(report) => {
                final_cost = report.final_cost;
                traces.push(TraceBlock {
                    label: format!("{label}_r{round}"),
                    rows: report.trace,
                });
            }
            Err(BAError::SingularNormalEquations) => {
                return Ok(Some(BaOutcome { gated, final_cost: f64::NAN, failed: true }))
            }
            Err(e) => return Err(e.into()),
        }
        if problem.plane_factors.is_empty() {
            break; // second round changes nothing without gating decisions
        }
    }
    write_back(map, &problem);
    Ok(Some(BaOutcome { gated, final_cost, failed: false }))
}

/// Fit or refit cluster planes. `force` refits every cluster that already has
/// a plane (used after global adjustments move the geometry). Returns whether
/// any cluster gained its first accepted plane.
fn plane_fit_pass(
    map: &mut SemanticMap,
    params: &PipelineParams,
    fit_counter: &mut u64,
    force: bool,
) -> bool {
    let mut newly_accepted = false;
    let cluster_ids: Vec<u32> = map.clusters.keys().copied().collect();
    for cid in cluster_ids {
        let (class, members, had_plane, at_last_fit) = {
            let c = &map.clusters[&cid];
            (c.class, c.members.len(), c.plane.is_some(), c.members_at_last_fit)
        };
        if !map.classes.is_planar(class) {
            continue;
        }
        let min = params.ransac.min_inliers_for(class);
        let due = if had_plane {
            force || members >= at_last_fit + params.pipeline.refit_interval
        } else {
            members >= min && members > at_last_fit
        };
        if !due {
            continue;
        }

        let positions: Vec<Vector3<f64>> = map.clusters[&cid]
            .members
            .iter()
            .map(|pid| map.points[pid].position)
            .collect();
        *fit_counter += 1;
        let seed = params
            .seed
            .wrapping_add((cid as u64) << 32)
            .wrapping_add(*fit_counter);
        let fitted = ransac_plane(&positions, &params.ransac, seed)
            .ok()
            .filter(|fit| accept_plane(class, fit, &params.ransac))
            // Triangulation error is elongated along the viewing rays, so a
            // spurious but dense slab parallel to the rays can outvote the
            // real surface. A plane seen edge-on is not observable from
            // triangulated points; demand a minimum viewing angle.
            .filter(|fit| {
                let centroid: Vector3<f64> =
                    positions.iter().sum::<Vector3<f64>>() / positions.len() as f64;
                let mean_center: Vector3<f64> = map
                    .keyframes
                    .values()
                    .map(|kf| kf.pose.center())
                    .sum::<Vector3<f64>>()
                    / map.keyframes.len() as f64;
                let view = (centroid - mean_center).normalize();
                fit.plane.unit_normal().dot(&view).abs() >= MIN_VIEW_COSINE
            });
        {
            let c = map.clusters.get_mut(&cid).unwrap();
            c.members_at_last_fit = members;
            if let Some(fit) = fitted {
                if c.plane.is_none() {
                    newly_accepted = true;
                }
                c.plane = Some(fit);
            } else {
                continue; // keep any previous plane
            }
        }
        prune_far_points(map, cid, params.ransac.prune_kappa);
    }
    newly_accepted
}

/// Run the full back-end over a keyframe input sequence.
pub fn run_pipeline(
    classes: &ClassTable,
    intrinsics: &CameraIntrinsics,
    inputs: &[KeyframeInput],
    initial_points: &BTreeMap<u32, Vector3<f64>>,
    groundtruth: Option<&Trajectory>,
    params: &PipelineParams,
) -> Result<RunResult, PipelineError> {
    if inputs.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mut map = SemanticMap::new(classes.clone());
    let mut tracker = InstanceTracker::new();
    let mut traces = Vec::new();
    let mut fit_counter = 0u64;
    let mut skipped_tracks = 0usize;
    let mut repaired_points = 0usize;
    let mut merged_clusters = 0usize;
    let mut ba_failures = 0usize;
    let mut gated_plane_factors = 0usize;
    let mut final_cost = f64::NAN;
    let mut window_ids: Vec<u32> = Vec::new();

    let initial_traj = Trajectory::new(
        inputs
            .iter()
            .map(|i| (i.timestamp, i.pose_init.inverse()))
            .collect(),
    )?;

    for input in inputs {
        let kf_id = input.frame as u32;
        map.insert_keyframe(kf_id, input.pose_init, input.timestamp);
        window_ids.push(kf_id);
        if window_ids.len() > params.pipeline.window {
            window_ids.remove(0);
        }

        // Raw -> persistent instance ids for this frame.
        let mapping = tracker.track(&input.imap, &input.raw_class);
        let imap = input.imap.relabel(&mapping);

        for &(track, px, descriptor) in &input.observations {
            if !map.points.contains_key(&track) {
                let Some(&position) = initial_points.get(&track) else {
                    skipped_tracks += 1;
                    continue;
                };
                map.insert_point(MapPoint::new(track, position, classes.len(), descriptor));
            }
            map.points.get_mut(&track).unwrap().observations.push(Observation {
                keyframe: kf_id,
                pixel: px,
                weight: 1.0,
            });
            // Observations slightly outside the image carry no semantics.
            if map.upsert_point_semantics(track, &input.pmap, &imap, &px).is_ok() {
                map.assign_to_cluster(track)?;
            }
        }

        repaired_points += map.reproject_repair(kf_id, &imap, intrinsics)?;
        let newly_accepted = plane_fit_pass(&mut map, params, &mut fit_counter, false);
        merged_clusters += map.merge_pass(params.pipeline.tau_merge);

        if let Some(out) = run_ba(
            &mut map,
            Window::Keyframes(window_ids.clone()),
            intrinsics,
            params,
            params.ba.max_iterations_windowed,
            true,
            format!("kf{kf_id:06}_window"),
            &mut traces,
        )? {
            if out.failed {
                ba_failures += 1;
            }
        }

        if newly_accepted {
            if let Some(out) = run_ba(
                &mut map,
                Window::All,
                intrinsics,
                params,
                params.ba.max_iterations_global,
                true,
                format!("kf{kf_id:06}_global"),
                &mut traces,
            )? {
                if out.failed {
                    ba_failures += 1;
                }
            }
            plane_fit_pass(&mut map, params, &mut fit_counter, true);
        }
    }

    // Final consolidation: alternate plane refits and global adjustments so
    // the fixed planes and the geometry co-converge; a plane fitted on
    // drifted intermediate geometry must not be locked into the final state.
    merged_clusters += map.merge_pass(params.pipeline.tau_merge);
    for round in 0..3 {
        plane_fit_pass(&mut map, params, &mut fit_counter, true);
        if let Some(out) = run_ba(
            &mut map,
            Window::All,
            intrinsics,
            params,
            params.ba.max_iterations_global,
            true,
            format!("final_global{round}"),
            &mut traces,
        )? {
            gated_plane_factors = out.gated;
            final_cost = out.final_cost;
            if out.failed {
                ba_failures += 1;
            }
        }
    }
    // Last refit so the exported planes match the final point positions.
    plane_fit_pass(&mut map, params, &mut fit_counter, true);

    let trajectory = Trajectory::new(
        map.keyframes
            .iter()
            .map(|(_, kf)| (kf.timestamp, kf.pose.inverse()))
            .collect(),
    )?;

    let planes: Vec<PlaneSummary> = map
        .clusters
        .values()
        .filter_map(|c| {
            c.plane.as_ref().map(|fit| PlaneSummary {
                cluster: c.id,
                class: c.class,
                instance: c.instance,
                coefficients: fit.plane.coefficients().into(),
                inliers: fit.inliers.len(),
                inlier_rms: fit.inlier_rms,
                members: c.members.len(),
                pruned: c.pruned.len(),
            })
        })
        .collect();

    let (ate, initial_ate) = match groundtruth {
        Some(gt) => (
            Some(ate_rmse(&trajectory, gt, DEFAULT_MAX_DT)?),
            Some(ate_rmse(&initial_traj, gt, DEFAULT_MAX_DT)?),
        ),
        None => (None, None),
    };

    let report = RunReport {
        mode: params.mode.to_string(),
        seed: params.seed,
        num_keyframes: map.keyframes.len(),
        num_points: map.points.len(),
        num_clusters: map.clusters.len(),
        num_accepted_planes: planes.len(),
        skipped_tracks,
        repaired_points,
        merged_clusters,
        ba_failures,
        gated_plane_factors,
        final_cost,
        ate_rmse: ate,
        initial_ate_rmse: initial_ate,
    };

    Ok(RunResult { map, trajectory, planes, report, traces })
}

#[derive(Debug, Serialize)]
struct PointJson {
    id: u32,
    position: [f64; 3],
    class: usize,
    instance: u32,
    cluster: Option<u32>,
    observations: usize,
}

#[derive(Debug, Serialize)]
struct ClusterJson {
    id: u32,
    class: usize,
    instance: u32,
    members: usize,
    pruned: usize,
    has_plane: bool,
}

#[derive(Debug, Serialize)]
struct MapJson {
    points: Vec<PointJson>,
    clusters: Vec<ClusterJson>,
}

/// Write the run artifacts into `dir` and return relative path -> SHA-256,
/// for the caller's manifest.
pub fn export_artifacts(dir: &Path, result: &RunResult) -> Result<BTreeMap<String, String>, IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;

    tum::write_trajectory(&dir.join("trajectory.txt"), &result.trajectory)?;
    ply::write_map_ply(&dir.join("map.ply"), &result.map)?;

    let map_json = MapJson {
        points: result
            .map
            .points
            .values()
            .map(|p| PointJson {
                id: p.id,
                position: [p.position[0], p.position[1], p.position[2]],
                class: p.class,
                instance: p.instance,
                cluster: result.map.cluster_of(p.id),
                observations: p.observations.len(),
            })
            .collect(),
        clusters: result
            .map
            .clusters
            .values()
            .map(|c| ClusterJson {
                id: c.id,
                class: c.class,
                instance: c.instance,
                members: c.members.len(),
                pruned: c.pruned.len(),
                has_plane: c.plane.is_some(),
            })
            .collect(),
    };
    write_json(&dir.join("map.json"), &map_json)?;
    write_json(&dir.join("planes.json"), &result.planes)?;
    write_json(&dir.join("report.json"), &result.report)?;

    let mut csv = String::from("label,iteration,total_cost,reprojection_cost,plane_cost,lambda,accepted\n");
    for block in &result.traces {
        for row in &block.rows {
            writeln!(
                csv,
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{}",
                block.label,
                row.iteration,
                row.total_cost,
                row.reprojection_cost,
                row.plane_cost,
                row.lambda,
                row.accepted
            )
            .unwrap();
        }
    }
    let trace_path = dir.join("trace.csv");
    std::fs::write(&trace_path, csv).map_err(|e| IoError::io(&trace_path, e))?;

    let mut manifest = BTreeMap::new();
    for name in ["trajectory.txt", "map.ply", "map.json", "planes.json", "report.json", "trace.csv"] {
        manifest.insert(name.to_string(), crate::io::sha256_file(&dir.join(name))?);
    }
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).expect("json serialize");
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

/// Convenience driver for a synthetic run: generate, perturb, run.
pub fn run_synthetic(
    spec: &crate::sim::SceneSpec,
    classes: &ClassTable,
    params: &PipelineParams,
) -> Result<RunResult, PipelineError> {
    let bundle = crate::sim::generate_scene(spec, classes, params.seed)
        .map_err(|e| PipelineError::Io(IoError::Parse {
            path: "<scene spec>".into(),
            message: e.to_string(),
        }))?;
    let init = crate::sim::perturb_initialization(
        &bundle,
        params.pipeline.init_pose_noise_m,
        params.pipeline.init_pose_noise_deg,
        params.pipeline.init_point_noise_m,
        params.seed,
    );
    let inputs = keyframe_inputs_from_bundle(&bundle, &init, params.pipeline.keyframe_every);
    let gt = Trajectory::new(
        bundle
            .timestamps
            .iter()
            .zip(bundle.poses.iter())
            .map(|(t, p)| (*t, p.inverse()))
            .collect(),
    )?;
    run_pipeline(classes, &spec.intrinsics, &inputs, &init.points, Some(&gt), params)
}

/// Convenience driver for a dataset run.
pub fn run_dataset(ds: &Dataset, classes: &ClassTable, params: &PipelineParams) -> Result<RunResult, PipelineError> {
    let inputs = keyframe_inputs_from_dataset(ds, params.pipeline.keyframe_every, params.pipeline.alpha)?;
    run_pipeline(
        classes,
        &ds.intrinsics,
        &inputs,
        &ds.initial_points,
        ds.groundtruth.as_ref(),
        params,
    )
}

/// Export a synthetic scene as a dataset directory (see [`dataset`]).
pub fn export_synthetic_dataset(
    spec: &crate::sim::SceneSpec,
    classes: &ClassTable,
    params: &PipelineParams,
    dir: &Path,
) -> Result<(), PipelineError> {
    let bundle = crate::sim::generate_scene(spec, classes, params.seed)
        .map_err(|e| PipelineError::Io(IoError::Parse {
            path: "<scene spec>".into(),
            message: e.to_string(),
        }))?;
    let init = crate::sim::perturb_initialization(
        &bundle,
        params.pipeline.init_pose_noise_m,
        params.pipeline.init_pose_noise_deg,
        params.pipeline.init_point_noise_m,
        params.seed,
    );
    dataset::write_dataset(dir, &bundle, &init, params.pipeline.write_probs)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClassInfo;
    use crate::sim::{NoiseSpec, PlanarObjectSpec, SceneSpec, TrajectorySpec, Waypoint};

    fn classes() -> ClassTable {
        ClassTable {
            classes: vec![
                ClassInfo { name: "background".into(), planar: false, stuff: true },
                ClassInfo { name: "floor".into(), planar: true, stuff: true },
                ClassInfo { name: "table".into(), planar: true, stuff: false },
            ],
        }
    }

    fn scene() -> SceneSpec {
        SceneSpec {
            planar_objects: vec![
                PlanarObjectSpec {
                    class: 1,
                    plane: [0.0, 0.0, 1.0, 0.0],
                    center: [0.0, 0.0, 0.0],
                    half_extent: [1.0, 1.0],
                    count: 120,
                },
                PlanarObjectSpec {
                    class: 2,
                    plane: [0.0, 0.0, 1.0, -0.4],
                    center: [0.3, 0.2, 0.4],
                    half_extent: [0.3, 0.3],
                    count: 80,
                },
            ],
            clutter: vec![],
            intrinsics: CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap(),
            trajectory: TrajectorySpec {
                waypoints: vec![
                    Waypoint { position: [0.0, -1.6, 1.6], look_at: [0.0, 0.0, 0.2] },
                    Waypoint { position: [0.6, -1.5, 1.7], look_at: [0.0, 0.0, 0.2] },
                    Waypoint { position: [0.9, -1.2, 1.9], look_at: [0.0, 0.0, 0.2] },
                ],
                frames: 12,
                dt: 1.0 / 30.0,
            },
            noise: NoiseSpec {
                pixel_sigma: 0.3,
                label_error_rate: 0.05,
                churn_rate: 0.1,
                outlier_rate: 0.05,
                descriptor_flip_rate: 0.02,
                dropout_rate: 0.0,
            },
        }
    }

    fn params(mode: Mode, seed: u64) -> PipelineParams {
        let mut p = PipelineParams {
            mode,
            seed,
            pipeline: PipelineConfig::default(),
            ba: BAConfig::default(),
            ransac: RansacConfig::default(),
        };
        p.pipeline.keyframe_every = 2;
        p.pipeline.init_pose_noise_m = 0.02;
        p.pipeline.init_pose_noise_deg = 1.0;
        p.pipeline.init_point_noise_m = 0.02;
        p
    }

    #[test]
    fn synthetic_run_recovers_planes_and_improves_ate() {
        let result = run_synthetic(&scene(), &classes(), &params(Mode::Planar, 1)).unwrap();
        assert!(result.report.num_accepted_planes >= 2, "planes: {:?}", result.planes);
        assert!(result.map.check_partition());
        let ate = result.report.ate_rmse.unwrap();
        let init = result.report.initial_ate_rmse.unwrap();
        assert!(ate < init, "ate {ate} vs initial {init}");
        // Fitted normals should be near +-z.
        for plane in &result.planes {
            let nz = plane.coefficients[2].abs()
                / (plane.coefficients[0].powi(2)
                    + plane.coefficients[1].powi(2)
                    + plane.coefficients[2].powi(2))
                .sqrt();
            assert!(nz > 0.99, "plane normal {:?}", plane.coefficients);
        }
    }

    #[test]
    fn reruns_are_identical() {
        let a = run_synthetic(&scene(), &classes(), &params(Mode::Planar, 2)).unwrap();
        let b = run_synthetic(&scene(), &classes(), &params(Mode::Planar, 2)).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.trajectory.frames.len(), b.trajectory.frames.len());
        for (fa, fb) in a.trajectory.frames.iter().zip(b.trajectory.frames.iter()) {
            assert_eq!(fa.1.translation, fb.1.translation);
        }
    }

    #[test]
    fn export_is_deterministic() {
        let result = run_synthetic(&scene(), &classes(), &params(Mode::Planar, 3)).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = export_artifacts(d1.path(), &result).unwrap();
        let m2 = export_artifacts(d2.path(), &result).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.len(), 6);
    }

    #[test]
    fn plain_mode_runs_and_reports_planes() {
        let result = run_synthetic(&scene(), &classes(), &params(Mode::Plain, 1)).unwrap();
        // Fitting still runs in plain mode; only the optimizer ignores planes.
        assert!(result.report.num_accepted_planes >= 1);
        assert!(result.report.ate_rmse.unwrap() < result.report.initial_ate_rmse.unwrap());
    }

    #[test]
    fn dataset_round_trip_matches_memory_path() {
        let classes = classes();
        let p = params(Mode::Planar, 4);
        let dir = tempfile::tempdir().unwrap();
        export_synthetic_dataset(&scene(), &classes, &p, dir.path()).unwrap();
        let ds = Dataset::load(dir.path()).unwrap();
        let result = run_dataset(&ds, &classes, &p).unwrap();
        assert!(result.report.ate_rmse.is_some());
        assert!(result.report.num_keyframes >= 5);
    }
}
