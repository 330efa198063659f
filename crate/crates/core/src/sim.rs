//! Deterministic synthetic scene generation.
//!
//! A scene is a set of planar objects (points sampled on a rectangle in a
//! ground-truth plane), volumetric clutter, a camera trajectory interpolated
//! between waypoints, and noise settings. Everything is a pure function of
//! `(spec, seed)`, so repeated runs are bit-identical.
//!
//! Segmentation is rendered at coarse granularity: each object paints the
//! bounding rectangle of its projected points with its class (subject to the
//! label error rate) and, for "thing" classes, a raw instance id that may be
//! churned into a fresh id each frame to exercise the IOU tracker.

use crate::cluster::{ClassTable, Descriptor};
use crate::geometry::{project, CameraIntrinsics, Pixel, Plane, Pose};
use crate::semantics::{InstanceMap, ProbabilityMap};
use nalgebra::{UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use thiserror::Error;

/// Default per-observation descriptor bit-flip probability.
pub const DESCRIPTOR_FLIP_RATE: f64 = 0.02;
/// Confidence of the synthesized per-pixel class distribution.
pub const LABEL_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PlanarObjectSpec {
    pub class: usize,
    /// Raw plane coefficients (a, b, c, d); normalized at build.
    pub plane: [f64; 4],
    /// Rectangle center; projected onto the plane at build.
    pub center: [f64; 3],
    /// In-plane rectangle half-extents, meters.
    pub half_extent: [f64; 2],
    pub count: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClutterSpec {
    /// Labeled clutter gets a class and (for things) an instance; `None`
    /// renders as background.
    pub class: Option<usize>,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub count: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Waypoint {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrajectorySpec {
    pub waypoints: Vec<Waypoint>,
    pub frames: usize,
    /// Frame period, seconds.
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    /// Gaussian pixel noise sigma on observations.
    pub pixel_sigma: f64,
    /// Probability that a rendered pixel gets a wrong class.
    pub label_error_rate: f64,
    /// Probability that an instance gets a fresh raw id in a frame.
    pub churn_rate: f64,
    /// Fraction of planar-object points displaced off their plane.
    pub outlier_rate: f64,
    /// Per-bit descriptor flip probability per observation.
    #[serde(default = "default_flip_rate")]
    pub descriptor_flip_rate: f64,
    /// Probability that a visible point yields no observation in a frame
    /// (failed detection or match), shortening the tracks.
    #[serde(default)]
    pub dropout_rate: f64,
}

fn default_flip_rate() -> f64 {
    DESCRIPTOR_FLIP_RATE
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            pixel_sigma: 0.0,
            label_error_rate: 0.0,
            churn_rate: 0.0,
            outlier_rate: 0.0,
            descriptor_flip_rate: 0.0,
            dropout_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub planar_objects: Vec<PlanarObjectSpec>,
    pub clutter: Vec<ClutterSpec>,
    pub intrinsics: CameraIntrinsics,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseSpec,
}

/// A ground-truth point with its semantic identity.
#[derive(Debug, Clone)]
pub struct TruePoint {
    pub id: u32,
    pub position: Vector3<f64>,
    pub class: usize,
    /// Ground-truth instance id; 0 for stuff and unlabeled clutter.
    pub instance: u32,
    /// Index into the renderable object list, if any.
    pub object: Option<usize>,
    pub descriptor: Descriptor,
}

/// Everything the verification harness needs about a generated scene.
#[derive(Debug, Clone)]
pub struct GroundTruthBundle {
    pub spec: SceneSpec,
    pub seed: u64,
    pub timestamps: Vec<f64>,
    /// Camera-from-world pose per frame.
    pub poses: Vec<Pose>,
    pub points: Vec<TruePoint>,
    /// (planar object index, ground-truth plane).
    pub planes: Vec<(usize, Plane)>,
    /// Number of renderable objects (planar objects + labeled clutter sets).
    pub num_objects: usize,
    /// Class count of the table the scene was generated against.
    pub num_classes: usize,
}

/// One rendered observation of a true point.
#[derive(Debug, Clone, Copy)]
pub struct FrameObservation {
    pub point_id: u32,
    pub pixel: Pixel,
    pub descriptor: Descriptor,
}

/// Observations plus synthesized panoptic segmentation for one frame.
#[derive(Debug, Clone)]
pub struct FrameRender {
    pub observations: Vec<FrameObservation>,
    pub pmap: ProbabilityMap,
    pub imap: InstanceMap,
    /// Raw instance id -> class for this frame's segments.
    pub raw_class: BTreeMap<u32, usize>,
}

/// Perturbed copies of the ground truth used to initialize the back-end.
#[derive(Debug, Clone)]
pub struct InitialEstimates {
    pub poses: Vec<Pose>,
    pub points: BTreeMap<u32, Vector3<f64>>,
}

/// Camera-from-world pose at `position` looking toward `target`, with +z
/// forward and +y roughly down.
pub fn look_at_pose(position: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let forward = (target - position).normalize();
    let mut down = Vector3::new(0.0, 0.0, -1.0);
    if forward.dot(&down).abs() > 0.99 {
        down = Vector3::new(0.0, 1.0, 0.0);
    }
    let right = down.cross(&forward).normalize();
    let down = forward.cross(&right);
    let r_wc = nalgebra::Matrix3::from_columns(&[right, down, forward]);
    let rotation = UnitQuaternion::from_rotation_matrix(
        &nalgebra::Rotation3::from_matrix_unchecked(r_wc.transpose()),
    );
    Pose::new(rotation, -(rotation * position))
}

fn interpolate_pose(a: &Pose, b: &Pose, t: f64) -> Pose {
    // Constant-velocity in position, shortest geodesic in rotation, on the
    // world-from-camera side so camera centers move linearly.
    let a_wc = a.inverse();
    let b_wc = b.inverse();
    let rotation = a_wc.rotation.slerp(&b_wc.rotation, t);
    let translation = a_wc.translation * (1.0 - t) + b_wc.translation * t;
    Pose::new(rotation, translation).inverse()
}

fn frame_rng(seed: u64, frame: usize, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(frame as u64)
            .wrapping_mul(0x2545_f491_4f6c_dd1d)
            .wrapping_add(stream),
    )
}

fn random_descriptor(rng: &mut ChaCha8Rng) -> Descriptor {
    let mut d = [0u8; 32];
    rng.fill(&mut d);
    Descriptor(d)
}

/// Orthonormal in-plane basis for a plane normal.
fn plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let n = normal.normalize();
    let helper = if n[0].abs() < 0.9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Generate the ground-truth bundle for a scene. Planar-object points satisfy
/// their plane equation exactly before outlier displacement.
pub fn generate_scene(
    spec: &SceneSpec,
    classes: &ClassTable,
    seed: u64,
) -> Result<GroundTruthBundle, SimError> {
    validate_spec(spec, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut points = Vec::new();
    let mut planes = Vec::new();
    let mut next_point_id = 0u32;
    let mut object_index = 0usize;

    for (i, obj) in spec.planar_objects.iter().enumerate() {
        let plane = Plane::new(Vector4::from(obj.plane))
            .map_err(|e| SimError::InvalidSpec(format!("planar object {i}: {e}")))?;
        let n = plane.unit_normal();
        let center = Vector3::from(obj.center);
        let center = center - n * plane.metric_distance(&center);
        let (u, v) = plane_basis(&n);
        let instance = if classes.is_stuff(obj.class) {
            0
        } else {
            object_index as u32 + 1
        };
        for _ in 0..obj.count {
            let a = (rng.gen::<f64>() * 2.0 - 1.0) * obj.half_extent[0];
            let b = (rng.gen::<f64>() * 2.0 - 1.0) * obj.half_extent[1];
            let mut position = center + u * a + v * b;
            if rng.gen::<f64>() < spec.noise.outlier_rate {
                // Gross off-plane displacement, at least a few centimeters.
                let offset = 0.05 + 0.15 * rng.gen::<f64>();
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                position += n * sign * offset;
            }
            points.push(TruePoint {
                id: next_point_id,
                position,
                class: obj.class,
                instance,
                object: Some(object_index),
                descriptor: random_descriptor(&mut rng),
            });
            next_point_id += 1;
        }
        planes.push((object_index, plane));
        object_index += 1;
    }

    for clutter in &spec.clutter {
        let (class, instance, object) = match clutter.class {
            Some(c) if !classes.is_stuff(c) => (c, object_index as u32 + 1, Some(object_index)),
            Some(c) => (c, 0, Some(object_index)),
            None => (0, 0, None),
        };
        for _ in 0..clutter.count {
            let position = Vector3::new(
                clutter.min[0] + rng.gen::<f64>() * (clutter.max[0] - clutter.min[0]),
                clutter.min[1] + rng.gen::<f64>() * (clutter.max[1] - clutter.min[1]),
                clutter.min[2] + rng.gen::<f64>() * (clutter.max[2] - clutter.min[2]),
            );
            points.push(TruePoint {
                id: next_point_id,
                position,
                class,
                instance,
                object,
                descriptor: random_descriptor(&mut rng),
            });
            next_point_id += 1;
        }
        if object.is_some() {
            object_index += 1;
        }
    }

    // Trajectory: piecewise constant-velocity between waypoint poses.
    let wp_poses: Vec<Pose> = spec
        .trajectory
        .waypoints
        .iter()
        .map(|w| look_at_pose(&Vector3::from(w.position), &Vector3::from(w.look_at)))
        .collect();
    let frames = spec.trajectory.frames;
    let mut poses = Vec::with_capacity(frames);
    let mut timestamps = Vec::with_capacity(frames);
    for f in 0..frames {
        let s = if frames > 1 {
            f as f64 / (frames - 1) as f64
        } else {
            0.0
        };
        let scaled = s * (wp_poses.len() - 1) as f64;
        let idx = (scaled.floor() as usize).min(wp_poses.len() - 2);
        let t = scaled - idx as f64;
        poses.push(interpolate_pose(&wp_poses[idx], &wp_poses[idx + 1], t));
        timestamps.push(f as f64 * spec.trajectory.dt);
    }

    let bundle = GroundTruthBundle {
        spec: spec.clone(),
        seed,
        timestamps,
        poses,
        points,
        planes,
        num_objects: object_index,
        num_classes: classes.len(),
    };

    // Visibility check: most frames must keep the scene in front of the camera.
    let mut good_frames = 0usize;
    for pose in &bundle.poses {
        let in_front = bundle
            .points
            .iter()
            .filter(|p| project(pose, &spec.intrinsics, &p.position).is_ok())
            .count();
        if in_front * 2 >= bundle.points.len() {
            good_frames += 1;
        }
    }
    if good_frames * 10 < frames * 9 {
        return Err(SimError::InvalidSpec(format!(
            "scene visible in only {good_frames}/{frames} frames"
        )));
    }

    Ok(bundle)
}

fn validate_spec(spec: &SceneSpec, classes: &ClassTable) -> Result<(), SimError> {
    for rate in [
        spec.noise.label_error_rate,
        spec.noise.churn_rate,
        spec.noise.outlier_rate,
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(SimError::InvalidSpec(format!("rate {rate} outside [0,1]")));
        }
    }
    if spec.noise.pixel_sigma < 0.0 {
        return Err(SimError::InvalidSpec("negative pixel sigma".into()));
    }
    if spec.trajectory.waypoints.len() < 2 {
        return Err(SimError::InvalidSpec("need at least 2 waypoints".into()));
    }
    if spec.trajectory.frames == 0 || spec.trajectory.dt <= 0.0 {
        return Err(SimError::InvalidSpec("empty trajectory".into()));
    }
    for obj in &spec.planar_objects {
        if classes.get(obj.class).is_none() {
            return Err(SimError::InvalidSpec(format!(
                "planar object class {} not in class table",
                obj.class
            )));
        }
        if !classes.is_planar(obj.class) {
            return Err(SimError::InvalidSpec(format!(
                "class {} is not marked planar in the class table",
                obj.class
            )));
        }
    }
    for clutter in &spec.clutter {
        if let Some(c) = clutter.class {
            if classes.get(c).is_none() {
                return Err(SimError::InvalidSpec(format!(
                    "clutter class {c} not in class table"
                )));
            }
        }
    }
    Ok(())
}

/// Render observations and a synthetic panoptic segmentation for one frame.
pub fn render_frame(bundle: &GroundTruthBundle, frame: usize, noise: &NoiseSpec) -> FrameRender {
    let spec = &bundle.spec;
    let k = &spec.intrinsics;
    let pose = &bundle.poses[frame];
    let mut rng = frame_rng(bundle.seed, frame, 1);

    // Project all points; remember per-object pixel bounds.
    let mut projections: Vec<(u32, Pixel, Option<usize>)> = Vec::new();
    let mut object_bounds: BTreeMap<usize, (f64, f64, f64, f64)> = BTreeMap::new();
    for p in &bundle.points {
        let Ok(px) = project(pose, k, &p.position) else {
            continue;
        };
        if !k.contains(&px) {
            continue;
        }
        if let Some(obj) = p.object {
            let b = object_bounds
                .entry(obj)
                .or_insert((px.u, px.v, px.u, px.v));
            b.0 = b.0.min(px.u);
            b.1 = b.1.min(px.v);
            b.2 = b.2.max(px.u);
            b.3 = b.3.max(px.v);
        }
        projections.push((p.id, px, p.object));
    }

    // Raw instance ids for this frame: stable gt id, or a churned fresh id.
    let mut object_class: BTreeMap<usize, usize> = BTreeMap::new();
    let mut object_instance: BTreeMap<usize, u32> = BTreeMap::new();
    for p in &bundle.points {
        if let Some(obj) = p.object {
            object_class.insert(obj, p.class);
            object_instance.insert(obj, p.instance);
        }
    }
    let mut raw_ids: BTreeMap<usize, u32> = BTreeMap::new();
    let mut raw_class: BTreeMap<u32, usize> = BTreeMap::new();
    // Fresh ids stay below u16::MAX so instance images round-trip through
    // 16-bit PNGs.
    let mut fresh = 10_000u32 + frame as u32 % 500 * 100;
    for (&obj, &gt_instance) in &object_instance {
        if gt_instance == 0 {
            continue; // stuff: no raw instance
        }
        let raw = if rng.gen::<f64>() < noise.churn_rate {
            fresh += 1;
            fresh
        } else {
            gt_instance
        };
        raw_ids.insert(obj, raw);
        raw_class.insert(raw, object_class[&obj]);
    }

    // Paint class labels and instance ids into coarse per-object rectangles.
    let (w, h) = (k.width as usize, k.height as usize);
    let mut labels = vec![0u16; w * h];
    let mut instances = vec![0u32; w * h];
    // Painter's order: large rectangles first so small near objects are not
    // overwritten by the background-sized ones.
    let mut paint_order: Vec<(usize, (f64, f64, f64, f64))> =
        object_bounds.iter().map(|(&o, &b)| (o, b)).collect();
    paint_order.sort_by(|a, b| {
        let area = |r: &(f64, f64, f64, f64)| (r.2 - r.0) * (r.3 - r.1);
        area(&b.1)
            .partial_cmp(&area(&a.1))
            .unwrap()
            .then(a.0.cmp(&b.0))
    });
    for (obj, (u0, v0, u1, v1)) in paint_order {
        let class = object_class[&obj] as u16;
        let raw = raw_ids.get(&obj).copied().unwrap_or(0);
        for y in v0 as usize..=(v1 as usize).min(h - 1) {
            for x in u0 as usize..=(u1 as usize).min(w - 1) {
                labels[y * w + x] = class;
                instances[y * w + x] = raw;
            }
        }
    }
    // Per-pixel label noise.
    let num_classes = bundle.num_classes.max(2);
    if noise.label_error_rate > 0.0 {
        for label in labels.iter_mut() {
            if rng.gen::<f64>() < noise.label_error_rate {
                let mut wrong = rng.gen_range(0..num_classes as u16 - 1);
                if wrong >= *label {
                    wrong += 1;
                }
                *label = wrong;
            }
        }
    }
    let pmap = ProbabilityMap::from_labels(&labels, k.width, k.height, num_classes, LABEL_CONFIDENCE)
        .expect("label image matches intrinsics");
    let imap = InstanceMap::new(k.width, k.height, instances).expect("instance image matches");

    // Noisy keypoint observations with noisy descriptors.
    let gauss = Normal::new(0.0, noise.pixel_sigma.max(1e-12)).unwrap();
    let mut observations = Vec::new();
    for (id, px, _) in projections {
        if noise.dropout_rate > 0.0 && rng.gen::<f64>() < noise.dropout_rate {
            continue;
        }
        let noisy = if noise.pixel_sigma > 0.0 {
            Pixel::new(px.u + gauss.sample(&mut rng), px.v + gauss.sample(&mut rng))
        } else {
            px
        };
        if !k.contains(&noisy) {
            continue;
        }
        let mut descriptor = bundle.points[id as usize].descriptor;
        if noise.descriptor_flip_rate > 0.0 {
            for byte in descriptor.0.iter_mut() {
                for bit in 0..8 {
                    if rng.gen::<f64>() < noise.descriptor_flip_rate {
                        *byte ^= 1 << bit;
                    }
                }
            }
        }
        observations.push(FrameObservation {
            point_id: id,
            pixel: noisy,
            descriptor,
        });
    }

    FrameRender {
        observations,
        pmap,
        imap,
        raw_class,
    }
}

/// Deterministic perturbed copy of the ground truth for initialization.
/// Every pose stays within the given translation / rotation bounds of truth,
/// every point within `point_noise_m`.
pub fn perturb_initialization(
    bundle: &GroundTruthBundle,
    pose_noise_m: f64,
    pose_noise_deg: f64,
    point_noise_m: f64,
    seed: u64,
) -> InitialEstimates {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a_dead_beef);
    let unit = |rng: &mut ChaCha8Rng| -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            let n = v.norm();
            if n > 1e-6 && n <= 1.0 {
                return v / n;
            }
        }
    };
    let poses = bundle
        .poses
        .iter()
        .map(|pose| {
            let axis = unit(&mut rng);
            let angle = pose_noise_deg.to_radians() * rng.gen::<f64>();
            let dt = unit(&mut rng) * (pose_noise_m * rng.gen::<f64>());
            let dr = UnitQuaternion::from_scaled_axis(axis * angle);
            Pose::new(dr * pose.rotation, pose.translation + dt)
        })
        .collect();
    let points = bundle
        .points
        .iter()
        .map(|p| {
            let dx = unit(&mut rng) * (point_noise_m * rng.gen::<f64>());
            (p.id, p.position + dx)
        })
        .collect();
    InitialEstimates { poses, points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClassInfo;

    pub fn test_classes() -> ClassTable {
        ClassTable {
            classes: vec![
                ClassInfo { name: "background".into(), planar: false, stuff: true },
                ClassInfo { name: "floor".into(), planar: true, stuff: true },
                ClassInfo { name: "table".into(), planar: true, stuff: false },
                ClassInfo { name: "keyboard".into(), planar: true, stuff: false },
                ClassInfo { name: "book".into(), planar: true, stuff: false },
                ClassInfo { name: "object".into(), planar: false, stuff: false },
            ],
        }
    }

    pub fn floor_spec(outlier_rate: f64) -> SceneSpec {
        SceneSpec {
            planar_objects: vec![PlanarObjectSpec {
                class: 1,
                plane: [0.0, 0.0, 1.0, 0.0],
                center: [0.0, 0.0, 0.0],
                half_extent: [1.0, 1.0],
                count: 500,
            }],
            clutter: vec![],
            intrinsics: CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap(),
            trajectory: TrajectorySpec {
                waypoints: vec![
                    Waypoint { position: [0.0, -1.5, 1.5], look_at: [0.0, 0.0, 0.0] },
                    Waypoint { position: [0.5, -1.5, 1.5], look_at: [0.0, 0.0, 0.0] },
                ],
                frames: 10,
                dt: 1.0 / 30.0,
            },
            noise: NoiseSpec {
                pixel_sigma: 0.5,
                label_error_rate: 0.0,
                churn_rate: 0.0,
                outlier_rate,
                descriptor_flip_rate: DESCRIPTOR_FLIP_RATE,
                dropout_rate: 0.0,
            },
        }
    }

    #[test]
    fn floor_points_lie_on_plane() {
        let bundle = generate_scene(&floor_spec(0.0), &test_classes(), 1).unwrap();
        assert_eq!(bundle.points.len(), 500);
        for p in &bundle.points {
            assert!(p.position[2].abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = floor_spec(0.1);
        let classes = test_classes();
        let a = generate_scene(&spec, &classes, 7).unwrap();
        let b = generate_scene(&spec, &classes, 7).unwrap();
        for (pa, pb) in a.points.iter().zip(b.points.iter()) {
            assert_eq!(pa.position, pb.position);
            assert_eq!(pa.descriptor, pb.descriptor);
        }
        let ra = render_frame(&a, 3, &a.spec.noise);
        let rb = render_frame(&b, 3, &b.spec.noise);
        assert_eq!(ra.observations.len(), rb.observations.len());
        for (oa, ob) in ra.observations.iter().zip(rb.observations.iter()) {
            assert_eq!(oa.pixel, ob.pixel);
        }
        assert_eq!(ra.imap, rb.imap);
    }

    #[test]
    fn outlier_rate_displaces_expected_fraction() {
        let mut spec = floor_spec(0.3);
        spec.planar_objects[0].count = 100;
        let bundle = generate_scene(&spec, &test_classes(), 5).unwrap();
        let off: usize = bundle
            .points
            .iter()
            .filter(|p| p.position[2].abs() > 1e-6)
            .count();
        // Binomial(100, 0.3): stay within a generous band for the fixed seed.
        assert!((15..=45).contains(&off), "off-plane count {off}");
    }

    #[test]
    fn zero_noise_render_is_exact() {
        let bundle = generate_scene(&floor_spec(0.0), &test_classes(), 2).unwrap();
        let render = render_frame(&bundle, 0, &NoiseSpec::none());
        for obs in &render.observations {
            let gt = project(
                &bundle.poses[0],
                &bundle.spec.intrinsics,
                &bundle.points[obs.point_id as usize].position,
            )
            .unwrap();
            assert_eq!(obs.pixel, gt);
            assert_eq!(obs.descriptor, bundle.points[obs.point_id as usize].descriptor);
        }
        // All painted pixels carry the true class.
        let label_dist = render
            .pmap
            .pixel_distribution(&render.observations[0].pixel)
            .unwrap();
        assert_eq!(label_dist.argmax(), 1);
    }

    #[test]
    fn label_error_rate_shows_in_frequencies() {
        let mut spec = floor_spec(0.0);
        spec.noise.label_error_rate = 0.2;
        let bundle = generate_scene(&spec, &test_classes(), 3).unwrap();
        let render = render_frame(&bundle, 0, &spec.noise);
        // Count correct-class frequency over the pixels of the floor bbox by
        // sampling the observation pixels.
        let mut correct = 0usize;
        for obs in &render.observations {
            if render.pmap.pixel_distribution(&obs.pixel).unwrap().argmax() == 1 {
                correct += 1;
            }
        }
        let freq = correct as f64 / render.observations.len() as f64;
        assert!((0.7..=0.9).contains(&freq), "correct frequency {freq}");
    }

    #[test]
    fn full_churn_gives_fresh_ids_every_frame() {
        let mut spec = floor_spec(0.0);
        spec.planar_objects[0].class = 2; // thing class so it has an instance
        spec.noise.churn_rate = 1.0;
        let bundle = generate_scene(&spec, &test_classes(), 4).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for f in 0..5 {
            let render = render_frame(&bundle, f, &spec.noise);
            for &raw in render.raw_class.keys() {
                assert!(seen.insert(raw), "raw id {raw} reused");
                assert!(raw >= 10_000);
            }
        }
    }

    #[test]
    fn perturbation_respects_bounds() {
        let bundle = generate_scene(&floor_spec(0.0), &test_classes(), 6).unwrap();
        let zero = perturb_initialization(&bundle, 0.0, 0.0, 0.0, 9);
        for (a, b) in zero.poses.iter().zip(bundle.poses.iter()) {
            assert_eq!(a.translation, b.translation);
        }
        let init = perturb_initialization(&bundle, 0.01, 1.0, 0.005, 9);
        for (est, gt) in init.poses.iter().zip(bundle.poses.iter()) {
            assert!((est.translation - gt.translation).norm() <= 0.01 + 1e-12);
            assert!((est.rotation.inverse() * gt.rotation).angle() <= 1.0f64.to_radians() + 1e-9);
        }
        for p in &bundle.points {
            assert!((init.points[&p.id] - p.position).norm() <= 0.005 + 1e-12);
        }
        // Same seed, same perturbation.
        let again = perturb_initialization(&bundle, 0.01, 1.0, 0.005, 9);
        assert_eq!(init.points, again.points);
    }

    #[test]
    fn unknown_class_is_rejected() {
        let mut spec = floor_spec(0.0);
        spec.planar_objects[0].class = 42;
        assert!(matches!(
            generate_scene(&spec, &test_classes(), 0),
            Err(SimError::InvalidSpec(_))
        ));
    }
}
