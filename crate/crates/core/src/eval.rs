//! Trajectory and map-structure metrics: timestamp association, closed-form
//! similarity alignment, scale-aligned ATE RMSE, and plane-normal coherence.
//!
//! Trajectories store world-from-camera poses, matching the TUM file
//! convention, so a pose's translation is directly the camera position.

use crate::geometry::{Plane, Pose};
use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

/// Default timestamp association window, seconds.
pub const DEFAULT_MAX_DT: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no timestamp pairs within the association window")]
    NoMatches,
    #[error("degenerate configuration: need >= 3 non-collinear pairs")]
    DegenerateConfiguration,
    #[error("timestamps must be strictly increasing")]
    NonMonotonicTimestamps,
}

/// Timestamped world-from-camera poses.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub frames: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(frames: Vec<(f64, Pose)>) -> Result<Self, EvalError> {
        if frames.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(EvalError::NonMonotonicTimestamps);
        }
        Ok(Self { frames })
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.frames.iter().map(|(_, p)| p.translation).collect()
    }
}

/// Greedy nearest-timestamp association: candidate pairs are taken in order
/// of ascending |dt| (ties broken by index), each frame used at most once.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>, EvalError> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, (te, _)) in est.frames.iter().enumerate() {
        for (j, (tg, _)) in gt.frames.iter().enumerate() {
            let dt = (te - tg).abs();
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; est.frames.len()];
    let mut used_g = vec![false; gt.frames.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_e[i] && !used_g[j] {
            used_e[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::NoMatches);
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Closed-form least-squares similarity transform from `est` onto `gt`.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub residuals: Vec<f64>,
    pub rmse: f64,
}

/// Umeyama alignment over paired positions: finds `s, R, t` minimizing
/// `sum ||gt_i - (s R est_i + t)||^2`, with the determinant guard against
/// reflections.
pub fn align_similarity(
    est: &[Vector3<f64>],
    gt: &[Vector3<f64>],
) -> Result<AlignmentResult, EvalError> {
    if est.len() != gt.len() || est.len() < 3 {
        return Err(EvalError::DegenerateConfiguration);
    }
    let n = est.len() as f64;
    let mu_e: Vector3<f64> = est.iter().sum::<Vector3<f64>>() / n;
    let mu_g: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::<f64>::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt.iter()) {
        let de = e - mu_e;
        let dg = g - mu_g;
        cov += dg * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= n;
    var_e /= n;
    if var_e < 1e-15 {
        return Err(EvalError::DegenerateConfiguration);
    }

    let svd = DMatrix::from_iterator(3, 3, cov.iter().copied()).svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let v_t = svd.v_t.as_ref().unwrap();
    let u3 = Matrix3::from_iterator(u.iter().copied());
    let v_t3 = Matrix3::from_iterator(v_t.iter().copied());
    let mut s_diag = Matrix3::identity();
    if (u3 * v_t3).determinant() < 0.0 {
        s_diag[(2, 2)] = -1.0;
    }
    let r = u3 * s_diag * v_t3;
    if r.determinant() < 0.5 {
        return Err(EvalError::DegenerateConfiguration);
    }
    let sv = Vector3::new(
        svd.singular_values[0],
        svd.singular_values[1],
        svd.singular_values[2],
    );
    let d = Matrix3::from_diagonal(&sv);
    let scale = (d * s_diag).trace() / var_e;
    if !(scale > 0.0) {
        return Err(EvalError::DegenerateConfiguration);
    }
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let translation = mu_g - scale * (r * mu_e);

    let residuals: Vec<f64> = est
        .iter()
        .zip(gt.iter())
        .map(|(e, g)| (g - (scale * (r * e) + translation)).norm())
        .collect();
    let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    Ok(AlignmentResult {
        scale,
        rotation,
        translation,
        residuals,
        rmse,
    })
}

/// Scale-aligned absolute trajectory error (RMSE over associated frames).
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<f64, EvalError> {
    let pairs = associate(est, gt, max_dt)?;
    let e: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| est.frames[i].1.translation).collect();
    let g: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| gt.frames[j].1.translation).collect();
    Ok(align_similarity(&e, &g)?.rmse)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalAngleStats {
    pub max_deg: f64,
    pub min_deg: f64,
    pub median_deg: f64,
}

/// Pairwise angles between plane normals that should be parallel. The angle
/// is sign-invariant: `arccos(|n1 . n2|)` in degrees.
pub fn normal_angle_stats(planes: &[Plane], pairs: &[(usize, usize)]) -> Option<NormalAngleStats> {
    if pairs.is_empty() {
        return None;
    }
    let mut angles: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| {
            let a = planes[i].unit_normal();
            let b = planes[j].unit_normal();
            a.dot(&b).abs().min(1.0).acos().to_degrees()
        })
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = angles.len();
    let median = if n % 2 == 1 {
        angles[n / 2]
    } else {
        0.5 * (angles[n / 2 - 1] + angles[n / 2])
    };
    Some(NormalAngleStats {
        max_deg: angles[n - 1],
        min_deg: angles[0],
        median_deg: median,
    })
}

/// Median of a value list; `None` when empty. Used for the per-seed ATE
/// aggregation.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
