//! Robust plane estimation: least-squares planes via SVD inside a RANSAC
//! loop, class-dependent acceptance, and far-point pruning.

use crate::cluster::{Cluster, SemanticMap};
use crate::geometry::Plane;
use nalgebra::{DMatrix, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

/// Inliers required by the keyboard class.
pub const KEYBOARD_MIN_INLIERS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaneFitError {
    #[error("degenerate geometry: points are collinear or ill-conditioned")]
    DegenerateGeometry,
    #[error("need at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("no plane model with at least 3 inliers found")]
    NoModel,
}

/// RANSAC parameters. Minimum sample size is always 3.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Metric inlier distance threshold, meters.
    pub threshold_m: f64,
    /// Early-exit confidence target.
    pub confidence: f64,
    /// Class id -> minimum inlier count for plane acceptance.
    pub class_min_inliers: BTreeMap<usize, usize>,
    /// Fallback minimum for classes not listed above.
    pub default_min_inliers: usize,
    /// Far-point pruning multiplier on the inlier RMS distance.
    pub prune_kappa: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            threshold_m: 0.015,
            confidence: 0.999,
            class_min_inliers: BTreeMap::new(),
            default_min_inliers: 30,
            prune_kappa: 3.0,
        }
    }
}

impl RansacConfig {
    pub fn min_inliers_for(&self, class: usize) -> usize {
        self.class_min_inliers
            .get(&class)
            .copied()
            .unwrap_or(self.default_min_inliers)
    }
}

/// An estimated plane with its supporting inliers.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFitResult {
    pub plane: Plane,
    /// Indices into the candidate point list passed to the fit.
    pub inliers: Vec<usize>,
    /// RMS metric distance of the inliers, meters.
    pub inlier_rms: f64,
}

/// Total least-squares plane through a point set: the plane passes through
/// the centroid with normal given by the singular vector of the centered
/// point matrix with smallest singular value.
pub fn fit_plane_svd(points: &[Vector3<f64>]) -> Result<Plane, PlaneFitError> {
    if points.len() < 3 {
        return Err(PlaneFitError::TooFewPoints {
            min: 3,
            got: points.len(),
        });
    }
    let n = points.len();
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut m = DMatrix::zeros(n, 3);
    for (i, p) in points.iter().enumerate() {
        let c = p - centroid;
        m[(i, 0)] = c[0];
        m[(i, 1)] = c[1];
        m[(i, 2)] = c[2];
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.resize(3, 0.0);
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if (sv[1] - sv[2]).abs() < 1e-9 {
        return Err(PlaneFitError::DegenerateGeometry);
    }
    // nalgebra returns singular values in descending order; the last row of
    // V^T is the direction of least variance.
    let normal = Vector3::new(v_t[(2, 0)], v_t[(2, 1)], v_t[(2, 2)]);
    let d = -normal.dot(&centroid);
    Plane::new(Vector4::new(normal[0], normal[1], normal[2], d))
        .map_err(|_| PlaneFitError::DegenerateGeometry)
}

fn plane_from_sample(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Plane> {
    let n = (b - a).cross(&(c - a));
    if n.norm() < 1e-12 {
        return None;
    }
    Plane::from_point_normal(a, &n).ok()
}

fn collect_inliers(points: &[Vector3<f64>], plane: &Plane, threshold: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.metric_distance(p).abs() <= threshold)
        .map(|(i, _)| i)
        .collect()
}

fn rms_distance(points: &[Vector3<f64>], plane: &Plane, inliers: &[usize]) -> f64 {
    let ss: f64 = inliers
        .iter()
        .map(|&i| {
            let d = plane.metric_distance(&points[i]);
            d * d
        })
        .sum();
    (ss / inliers.len() as f64).sqrt()
}

/// RANSAC plane fit: repeated 3-point minimal samples, inlier counting with
/// the metric point-plane distance, early exit under the standard
/// `1 - (1 - w^3)^n >= confidence` rule, and a final SVD refit on the inliers
/// of the best model. Deterministic for a fixed seed.
pub fn ransac_plane(
    points: &[Vector3<f64>],
    cfg: &RansacConfig,
    seed: u64,
) -> Result<PlaneFitResult, PlaneFitError> {
    if points.len() < 3 {
        return Err(PlaneFitError::TooFewPoints {
            min: 3,
            got: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut best_inliers: Vec<usize> = Vec::new();
    let mut needed = cfg.max_iterations;

    for iter in 0..cfg.max_iterations {
        if iter >= needed {
            break;
        }
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let k = rng.gen_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let Some(plane) = plane_from_sample(&points[i], &points[j], &points[k]) else {
            continue;
        };
        let inliers = collect_inliers(points, &plane, cfg.threshold_m);
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
            let w = best_inliers.len() as f64 / n as f64;
            let p_sample = w * w * w;
            if p_sample >= 1.0 {
                needed = iter + 1;
            } else if p_sample > 0.0 {
                let est = (1.0 - cfg.confidence).ln() / (1.0 - p_sample).ln();
                needed = est.ceil().max(1.0) as usize;
            }
        }
    }

    // A minimal sample trivially explains its own 3 points, and a handful of
    // coincidental extras is easy to find in random data. Demand support from
    // a quarter of the candidates beyond the sample.
    let min_support = (3 + n / 4).max(4);
    if best_inliers.len() < min_support {
        return Err(PlaneFitError::NoModel);
    }
    let support: Vec<Vector3<f64>> = best_inliers.iter().map(|&i| points[i]).collect();
    let plane = fit_plane_svd(&support)?;
    // Re-gate against the refit plane so the reported inliers all satisfy the
    // threshold exactly.
    let inliers = collect_inliers(points, &plane, cfg.threshold_m);
    if inliers.len() < 3 {
        return Err(PlaneFitError::NoModel);
    }
    let inlier_rms = rms_distance(points, &plane, &inliers);
    Ok(PlaneFitResult {
        plane,
        inliers,
        inlier_rms,
    })
}

/// Class-dependent acceptance: enough inliers for this cluster class.
pub fn accept_plane(cluster_class: usize, fit: &PlaneFitResult, cfg: &RansacConfig) -> bool {
    fit.inliers.len() >= cfg.min_inliers_for(cluster_class)
}

/// Remove cluster points whose metric distance to the accepted plane exceeds
/// `kappa` times the inlier RMS. Points are excluded from the planar
/// constraint, not deleted from the map. Returns the removed point ids.
pub fn prune_far_points(map: &mut SemanticMap, cluster_id: u32, kappa: f64) -> Vec<u32> {
    let Some(cluster) = map.clusters.get(&cluster_id) else {
        return Vec::new();
    };
    let Some(fit) = cluster.plane.clone() else {
        return Vec::new();
    };
    let limit = kappa * fit.inlier_rms;
    let far: Vec<u32> = cluster
        .members
        .iter()
        .filter(|pid| !cluster.pruned.contains(pid))
        .filter(|pid| fit.plane.metric_distance(&map.points[pid].position).abs() > limit)
        .copied()
        .collect();
    let cluster = map.clusters.get_mut(&cluster_id).unwrap();
    for pid in &far {
        cluster.pruned.insert(*pid);
    }
    far
}

/// Member point ids that participate in the planar constraint.
pub fn constrained_members(cluster: &Cluster) -> impl Iterator<Item = u32> + '_ {
    cluster
        .members
        .iter()
        .filter(|pid| !cluster.pruned.contains(pid))
        .copied()
}
