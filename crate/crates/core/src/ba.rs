//! Plane-regularized bundle adjustment.
//!
//! The objective is the sum of Huber-robust reprojection terms over all
//! (keyframe, point) observations plus a unary point-plane regularizer
//! `pi^T (X, 1)` for every point in a cluster with an accepted plane. Planes
//! are held fixed; they constrain the map but are not variables, and points
//! are never projected onto their plane.
//!
//! Residuals are whitened before the robust loss: reprojection residuals by
//! the pixel noise sigma, plane residuals by multiplying with the plane
//! uncertainty weight (default 100, so a typical 1e-2 m point-plane distance
//! weighs like a one-pixel reprojection error).
//!
//! The solver is Levenberg-Marquardt on SE(3) x R^3 with the points
//! marginalized out of the normal equations by a Schur complement, so the
//! dense solve is only over the pose block.

use crate::cluster::SemanticMap;
use crate::geometry::{
    project, projection_jacobian, skew, CameraIntrinsics, GeometryError, Plane, Pose,
};
use crate::plane_fit::constrained_members;
use nalgebra::{
    DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, Matrix6x3, Matrix2x6, RowVector3, Vector2,
    Vector3, Vector6,
};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// 95th percentile of the one-dimensional chi-squared distribution.
pub const CHI2_GATE_1DOF: f64 = 3.841;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BAError {
    #[error("empty keyframe window")]
    EmptyWindow,
    #[error("damped normal equations unsolvable at maximum lambda")]
    SingularNormalEquations,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BAConfig {
    /// Point-plane uncertainty weight: the plane residual is scaled by this
    /// factor before entering the robust loss and the normal equations.
    pub plane_sigma: f64,
    /// Isotropic reprojection noise, pixels.
    pub pixel_sigma: f64,
    /// LM iteration cap for windowed problems.
    pub max_iterations_windowed: usize,
    /// LM iteration cap for global problems.
    pub max_iterations_global: usize,
    pub lambda_init: f64,
    pub lambda_max: f64,
    /// Terminate when an accepted step reduces the cost by less than this
    /// relative amount.
    pub rel_decrease_tol: f64,
    /// Terminate when the update norm falls below this.
    pub step_tol: f64,
    /// Huber elbow for whitened reprojection residuals, pixels.
    pub huber_delta_reproj: f64,
    /// Huber elbow for whitened plane residuals.
    pub huber_delta_plane: f64,
    /// Chi-squared gate on squared whitened plane residuals.
    pub chi2_gate: f64,
}

impl Default for BAConfig {
    fn default() -> Self {
        Self {
            plane_sigma: 100.0,
            pixel_sigma: 1.0,
            max_iterations_windowed: 20,
            max_iterations_global: 50,
            lambda_init: 1e-4,
            lambda_max: 1e10,
            rel_decrease_tol: 1e-8,
            step_tol: 1e-10,
            huber_delta_reproj: 2.447,
            huber_delta_plane: 1.96,
            chi2_gate: CHI2_GATE_1DOF,
        }
    }
}

/// Huber loss: cost and IRLS weight for a scalar residual magnitude.
pub fn huber(r: f64, delta: f64) -> (f64, f64) {
    let a = r.abs();
    if a <= delta {
        (0.5 * r * r, 1.0)
    } else {
        (delta * (a - 0.5 * delta), delta / a)
    }
}

/// Binary reprojection factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojFactor {
    pub keyframe: u32,
    pub point: u32,
    pub measured: Vector2<f64>,
}

/// Unary point-plane factor. The plane is a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFactor {
    pub point: u32,
    pub plane: Plane,
    pub active: bool,
}

/// The factor graph: pose and point variables plus both factor types.
#[derive(Debug, Clone)]
pub struct BAProblem {
    pub intrinsics: CameraIntrinsics,
    pub poses: BTreeMap<u32, Pose>,
    pub fixed_poses: BTreeSet<u32>,
    pub points: BTreeMap<u32, Vector3<f64>>,
    pub reproj_factors: Vec<ReprojFactor>,
    pub plane_factors: Vec<PlaneFactor>,
}

/// Keyframe selection for problem construction.
#[derive(Debug, Clone)]
pub enum Window {
    All,
    Keyframes(Vec<u32>),
}

/// Reprojection residual `proj(T, X) - x` with analytic Jacobians with
/// respect to the pose tangent (left-multiplicative, `[omega, rho]` layout)
/// and the point.
pub fn reprojection_residual_jacobian(
    pose: &Pose,
    k: &CameraIntrinsics,
    x_world: &Vector3<f64>,
    measured: &Vector2<f64>,
) -> Result<(Vector2<f64>, Matrix2x6<f64>, Matrix2x3<f64>), BAError> {
    let xc = pose.transform(x_world);
    let px = project(pose, k, x_world)?;
    let residual = Vector2::new(px.u, px.v) - measured;
    let j_proj = projection_jacobian(k, &xc);
    let mut j_pose = Matrix2x6::zeros();
    j_pose
        .fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(j_proj * (-skew(&xc))));
    j_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&j_proj);
    let j_point = j_proj * pose.rotation.to_rotation_matrix().into_inner();
    Ok((residual, j_pose, j_point))
}

/// Plane residual `pi^T (X, 1)` and its Jacobian with respect to the point,
/// which is just the normal part of the plane.
pub fn plane_residual_jacobian(plane: &Plane, x: &Vector3<f64>) -> (f64, RowVector3<f64>) {
    let n = plane.normal();
    (plane.residual(x), RowVector3::new(n[0], n[1], n[2]))
}

/// Cost breakdown of a problem state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub total: f64,
    pub reprojection: f64,
    pub plane: f64,
}

/// Penalty used when a candidate state pushes a point behind a camera, so
/// such steps are always rejected.
const BEHIND_CAMERA_COST: f64 = 1e12;

/// Total robust cost of the problem in its current state.
pub fn total_cost(problem: &BAProblem, cfg: &BAConfig) -> CostBreakdown {
    let mut reproj = 0.0;
    for f in &problem.reproj_factors {
        let pose = &problem.poses[&f.keyframe];
        let x = &problem.points[&f.point];
        match project(pose, &problem.intrinsics, x) {
            Ok(px) => {
                let r = (Vector2::new(px.u, px.v) - f.measured) / cfg.pixel_sigma;
                reproj += huber(r.norm(), cfg.huber_delta_reproj).0;
            }
            Err(_) => reproj += BEHIND_CAMERA_COST,
        }
    }
    let mut plane = 0.0;
    for f in problem.plane_factors.iter().filter(|f| f.active) {
        let r = cfg.plane_sigma * f.plane.residual(&problem.points[&f.point]);
        plane += huber(r, cfg.huber_delta_plane).0;
    }
    CostBreakdown {
        total: reproj + plane,
        reprojection: reproj,
        plane,
    }
}

/// Re-test every plane factor against the chi-squared gate on the squared
/// whitened residual, enabling or disabling it accordingly. Returns the
/// indices of the factors that are disabled afterwards.
pub fn gate_outliers(problem: &mut BAProblem, cfg: &BAConfig) -> Vec<usize> {
    let mut disabled = Vec::new();
    for (i, f) in problem.plane_factors.iter_mut().enumerate() {
        let r = cfg.plane_sigma * f.plane.residual(&problem.points[&f.point]);
        f.active = r * r <= cfg.chi2_gate;
        if !f.active {
            disabled.push(i);
        }
    }
    disabled
}

/// Build a BA problem from the map over a keyframe window. Reprojection
/// factors cover every observation made from a window keyframe; plane factors
/// cover non-pruned members of clusters with accepted planes, restricted to
/// points that are variables of the problem. The oldest window pose is fixed
/// as the gauge.
pub fn build_problem(
    map: &SemanticMap,
    window: &Window,
    intrinsics: &CameraIntrinsics,
    include_planes: bool,
) -> Result<BAProblem, BAError> {
    let kf_ids: Vec<u32> = match window {
        Window::All => map.keyframes.keys().copied().collect(),
        Window::Keyframes(ids) => {
            let mut ids = ids.clone();
            ids.sort_unstable();
            ids.dedup();
            ids
        }
    };
    if kf_ids.is_empty() {
        return Err(BAError::EmptyWindow);
    }
    let kf_set: BTreeSet<u32> = kf_ids.iter().copied().collect();

    let mut poses = BTreeMap::new();
    for &id in &kf_ids {
        let kf = map.keyframes.get(&id).ok_or(BAError::EmptyWindow)?;
        poses.insert(id, kf.pose);
    }
    let mut fixed_poses = BTreeSet::new();
    fixed_poses.insert(kf_ids[0]);

    let mut points = BTreeMap::new();
    let mut reproj_factors = Vec::new();
    for (pid, point) in &map.points {
        let mut seen = false;
        for obs in &point.observations {
            if kf_set.contains(&obs.keyframe) {
                seen = true;
                reproj_factors.push(ReprojFactor {
                    keyframe: obs.keyframe,
                    point: *pid,
                    measured: obs.pixel.vector(),
                });
            }
        }
        if seen {
            points.insert(*pid, point.position);
        }
    }

    let mut plane_factors = Vec::new();
    if include_planes {
        for cluster in map.clusters.values() {
            let Some(fit) = &cluster.plane else { continue };
            for pid in constrained_members(cluster) {
                if points.contains_key(&pid) {
                    plane_factors.push(PlaneFactor {
                        point: pid,
                        plane: fit.plane,
                        active: true,
                    });
                }
            }
        }
    }

    Ok(BAProblem {
        intrinsics: *intrinsics,
        poses,
        fixed_poses,
        points,
        reproj_factors,
        plane_factors,
    })
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: usize,
    pub total_cost: f64,
    pub reprojection_cost: f64,
    pub plane_cost: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub trace: Vec<TraceRow>,
    pub initial_cost: f64,
    pub final_cost: f64,
}

struct Linearization {
    h_pp: Vec<Matrix6<f64>>,
    g_p: Vec<Vector6<f64>>,
    h_xx: Vec<Matrix3<f64>>,
    g_x: Vec<Vector3<f64>>,
    /// Per point: off-diagonal blocks coupling it to free poses.
    w_blocks: Vec<Vec<(usize, Matrix6x3<f64>)>>,
}

/// Levenberg-Marquardt with Schur complement over the points. Accepted steps
/// never increase the cost; the quaternion is renormalized at every pose
/// retraction.
pub fn optimize_lm(
    problem: &mut BAProblem,
    cfg: &BAConfig,
    max_iterations: usize,
) -> Result<OptimizeReport, BAError> {
    let free_pose_ids: Vec<u32> = problem
        .poses
        .keys()
        .filter(|id| !problem.fixed_poses.contains(id))
        .copied()
        .collect();
    let pose_idx: BTreeMap<u32, usize> = free_pose_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let point_ids: Vec<u32> = problem.points.keys().copied().collect();
    let point_idx: BTreeMap<u32, usize> = point_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let np = free_pose_ids.len();
    let nx = point_ids.len();

    let mut lambda = cfg.lambda_init;
    let mut cost = total_cost(problem, cfg);
    let initial_cost = cost.total;
    let mut trace = Vec::new();

    let mut iteration = 0;
    while iteration < max_iterations {
        let lin = linearize(problem, cfg, &pose_idx, &point_idx, np, nx);

        // Inner damping loop: raise lambda until a step solves and improves.
        let mut accepted = false;
        while lambda <= cfg.lambda_max {
            let step = match solve_step(&lin, lambda, np, nx) {
                Some(step) => step,
                None => {
                    if lambda * 10.0 > cfg.lambda_max {
                        return Err(BAError::SingularNormalEquations);
                    }
                    lambda *= 10.0;
                    continue;
                }
            };
            let (d_poses, d_points, step_norm) = step;

            // Candidate state.
            let mut candidate = problem.clone();
            for (id, &i) in &pose_idx {
                let xi = d_poses.fixed_rows::<6>(6 * i).into_owned();
                let pose = candidate.poses[id].retract(&Vector6::from(xi));
                candidate.poses.insert(*id, pose);
            }
            for (id, &i) in &point_idx {
                let dx = Vector3::new(d_points[3 * i], d_points[3 * i + 1], d_points[3 * i + 2]);
                *candidate.points.get_mut(id).unwrap() += dx;
            }
            let new_cost = total_cost(&candidate, cfg);

            if new_cost.total < cost.total {
                let rel_decrease = (cost.total - new_cost.total) / cost.total.max(1e-300);
                problem.poses = candidate.poses;
                problem.points = candidate.points;
                cost = new_cost;
                lambda = (lambda * 0.5).max(1e-12);
                trace.push(TraceRow {
                    iteration,
                    total_cost: cost.total,
                    reprojection_cost: cost.reprojection,
                    plane_cost: cost.plane,
                    lambda,
                    accepted: true,
                });
                accepted = true;
                if rel_decrease < cfg.rel_decrease_tol || step_norm < cfg.step_tol {
                    return Ok(OptimizeReport {
                        trace,
                        initial_cost,
                        final_cost: cost.total,
                    });
                }
                break;
            } else {
                trace.push(TraceRow {
                    iteration,
                    total_cost: cost.total,
                    reprojection_cost: cost.reprojection,
                    plane_cost: cost.plane,
                    lambda,
                    accepted: false,
                });
                lambda *= 10.0;
                if step_norm < cfg.step_tol {
                    // The proposed step is already negligible; converged.
                    return Ok(OptimizeReport {
                        trace,
                        initial_cost,
                        final_cost: cost.total,
                    });
                }
            }
        }
        if !accepted {
            break; // damping exhausted without improvement
        }
        iteration += 1;
    }

    Ok(OptimizeReport {
        trace,
        initial_cost,
        final_cost: cost.total,
    })
}

fn linearize(
    problem: &BAProblem,
    cfg: &BAConfig,
    pose_idx: &BTreeMap<u32, usize>,
    point_idx: &BTreeMap<u32, usize>,
    np: usize,
    nx: usize,
) -> Linearization {
    let mut lin = Linearization {
        h_pp: vec![Matrix6::zeros(); np],
        g_p: vec![Vector6::zeros(); np],
        h_xx: vec![Matrix3::zeros(); nx],
        g_x: vec![Vector3::zeros(); nx],
        w_blocks: vec![Vec::new(); nx],
    };

    for f in &problem.reproj_factors {
        let pose = &problem.poses[&f.keyframe];
        let x = &problem.points[&f.point];
        let Ok((r, j_pose, j_point)) =
            reprojection_residual_jacobian(pose, &problem.intrinsics, x, &f.measured)
        else {
            continue; // behind camera: no linear contribution
        };
        let inv_sigma = 1.0 / cfg.pixel_sigma;
        let r_w = r * inv_sigma;
        let j_pose = j_pose * inv_sigma;
        let j_point = j_point * inv_sigma;
        let w = huber(r_w.norm(), cfg.huber_delta_reproj).1;

        let xi = point_idx[&f.point];
        lin.h_xx[xi] += w * j_point.transpose() * j_point;
        lin.g_x[xi] += w * j_point.transpose() * r_w;

        if let Some(&pi) = pose_idx.get(&f.keyframe) {
            lin.h_pp[pi] += w * j_pose.transpose() * j_pose;
            lin.g_p[pi] += w * j_pose.transpose() * r_w;
            lin.w_blocks[xi].push((pi, w * j_pose.transpose() * j_point));
        }
    }

    for f in problem.plane_factors.iter().filter(|f| f.active) {
        let x = &problem.points[&f.point];
        let (r, j) = plane_residual_jacobian(&f.plane, x);
        let r_w = cfg.plane_sigma * r;
        let j_w = cfg.plane_sigma * j;
        let w = huber(r_w, cfg.huber_delta_plane).1;
        let xi = point_idx[&f.point];
        lin.h_xx[xi] += w * j_w.transpose() * j_w;
        lin.g_x[xi] += w * j_w.transpose() * r_w;
    }

    lin
}

/// Solve the damped normal equations for one LM step via the point Schur
/// complement. Returns `(pose update, point update, joint step norm)` or
/// `None` when the reduced system is not positive definite.
fn solve_step(
    lin: &Linearization,
    lambda: f64,
    np: usize,
    nx: usize,
) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    // Damped point blocks and their inverses.
    let mut a_inv = Vec::with_capacity(nx);
    for i in 0..nx {
        let mut a = lin.h_xx[i];
        for d in 0..3 {
            a[(d, d)] += lambda * lin.h_xx[i][(d, d)].max(1e-12);
        }
        a_inv.push(a.try_inverse()?);
    }

    let mut s = DMatrix::<f64>::zeros(6 * np, 6 * np);
    let mut rhs = DVector::<f64>::zeros(6 * np);
    for i in 0..np {
        let mut h = lin.h_pp[i];
        for d in 0..6 {
            h[(d, d)] += lambda * lin.h_pp[i][(d, d)].max(1e-12);
        }
        s.view_mut((6 * i, 6 * i), (6, 6)).copy_from(&h);
        rhs.rows_mut(6 * i, 6).copy_from(&(-lin.g_p[i]));
    }
    for x in 0..nx {
        let ai = &a_inv[x];
        let gx = &lin.g_x[x];
        for &(pi, w_i) in &lin.w_blocks[x] {
            let wa = w_i * ai;
            // rhs += W A^-1 g_x
            let add = wa * gx;
            for d in 0..6 {
                rhs[6 * pi + d] += add[d];
            }
            for &(pj, w_j) in &lin.w_blocks[x] {
                let block = wa * w_j.transpose();
                for r in 0..6 {
                    for c in 0..6 {
                        s[(6 * pi + r, 6 * pj + c)] -= block[(r, c)];
                    }
                }
            }
        }
    }

    let d_poses = if np > 0 {
        s.cholesky()?.solve(&rhs)
    } else {
        DVector::zeros(0)
    };

    // Back-substitute the points: dx = A^-1 (-g_x - W^T dp).
    let mut d_points = DVector::<f64>::zeros(3 * nx);
    for x in 0..nx {
        let mut rhs_x = -lin.g_x[x];
        for &(pi, w_i) in &lin.w_blocks[x] {
            let dp = Vector6::from(d_poses.fixed_rows::<6>(6 * pi).into_owned());
            rhs_x -= w_i.transpose() * dp;
        }
        let dx = a_inv[x] * rhs_x;
        for d in 0..3 {
            d_points[3 * x + d] = dx[d];
        }
    }

    let step_norm = (d_poses.norm_squared() + d_points.norm_squared()).sqrt();
    Some((d_poses, d_points, step_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn huber_closed_forms() {
        assert_eq!(huber(0.0, 1.0), (0.0, 1.0));
        let d = 1.3;
        let (c, w) = huber(d, d);
        assert_relative_eq!(c, d * d / 2.0, epsilon = 1e-15);
        assert_relative_eq!(w, 1.0);
        let (c, w) = huber(2.0, 1.0);
        assert_relative_eq!(c, 1.0 * (2.0 - 0.5), epsilon = 1e-15);
        assert_relative_eq!(w, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn perfect_observation_has_zero_residual() {
        let pose = Pose::identity();
        let k = intrinsics();
        let x = Vector3::new(0.1, -0.2, 2.0);
        let px = project(&pose, &k, &x).unwrap();
        let (r, _, _) =
            reprojection_residual_jacobian(&pose, &k, &x, &Vector2::new(px.u, px.v)).unwrap();
        assert_relative_eq!(r.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn point_jacobian_on_optical_axis() {
        let k = intrinsics();
        let z = 2.0;
        let x = Vector3::new(0.0, 0.0, z);
        let (_, _, j_point) =
            reprojection_residual_jacobian(&Pose::identity(), &k, &x, &Vector2::zeros()).unwrap();
        let expected = Matrix2x3::new(k.fx / z, 0.0, 0.0, 0.0, k.fy / z, 0.0);
        assert_relative_eq!(j_point, expected, epsilon = 1e-12);
    }

    fn random_pose(rng: &mut StdRng) -> Pose {
        Pose::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(
                0.2 * (rng.gen::<f64>() - 0.5),
                0.2 * (rng.gen::<f64>() - 0.5),
                0.2 * (rng.gen::<f64>() - 0.5),
            )),
            Vector3::new(
                0.3 * (rng.gen::<f64>() - 0.5),
                0.3 * (rng.gen::<f64>() - 0.5),
                0.3 * (rng.gen::<f64>() - 0.5),
            ),
        )
    }

    #[test]
    fn reprojection_jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(20);
        let k = intrinsics();
        let mut tested = 0;
        while tested < 1000 {
            let pose = random_pose(&mut rng);
            let x = Vector3::new(
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                1.5 + rng.gen::<f64>() * 2.0,
            );
            let measured = Vector2::new(rng.gen::<f64>() * 640.0, rng.gen::<f64>() * 480.0);
            let Ok((_, j_pose, j_point)) =
                reprojection_residual_jacobian(&pose, &k, &x, &measured)
            else {
                continue;
            };
            let h = 1e-7;

            let mut fd_point = Matrix2x3::zeros();
            for c in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[c] += h;
                xm[c] -= h;
                let (rp, _, _) = reprojection_residual_jacobian(&pose, &k, &xp, &measured).unwrap();
                let (rm, _, _) = reprojection_residual_jacobian(&pose, &k, &xm, &measured).unwrap();
                fd_point.set_column(c, &((rp - rm) / (2.0 * h)));
            }
            let scale = j_point.norm().max(1.0);
            assert!((j_point - fd_point).norm() / scale < 1e-6);

            let mut fd_pose = Matrix2x6::zeros();
            for c in 0..6 {
                let mut xi = Vector6::zeros();
                xi[c] = h;
                let pp = pose.retract(&xi);
                xi[c] = -h;
                let pm = pose.retract(&xi);
                let (rp, _, _) = reprojection_residual_jacobian(&pp, &k, &x, &measured).unwrap();
                let (rm, _, _) = reprojection_residual_jacobian(&pm, &k, &x, &measured).unwrap();
                fd_pose.set_column(c, &((rp - rm) / (2.0 * h)));
            }
            let scale = j_pose.norm().max(1.0);
            assert!(
                (j_pose - fd_pose).norm() / scale < 1e-6,
                "pose jacobian mismatch: {}",
                (j_pose - fd_pose).norm() / scale
            );
            tested += 1;
        }
    }

    #[test]
    fn plane_jacobian_is_the_normal() {
        let plane = Plane::new(nalgebra::Vector4::new(0.0, 0.0, 1.0, 0.0)).unwrap();
        let (_, j) = plane_residual_jacobian(&plane, &Vector3::new(3.0, -1.0, 7.0));
        assert_eq!(j, RowVector3::new(0.0, 0.0, 1.0));

        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..100 {
            let plane = Plane::new(nalgebra::Vector4::new(
                rng.gen::<f64>() + 0.1,
                rng.gen(),
                rng.gen(),
                rng.gen::<f64>() - 0.5,
            ))
            .unwrap();
            let x = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let (r0, j) = plane_residual_jacobian(&plane, &x);
            assert_relative_eq!(r0, 0.0 + plane.residual(&x));
            let h = 1e-6;
            for c in 0..3 {
                let mut xp = x;
                xp[c] += h;
                let fd = (plane.residual(&xp) - plane.residual(&x)) / h;
                assert!((fd - j[c]).abs() < 1e-8); // linear residual: exact
            }
            // On-plane point: residual 0, gradient unchanged.
            let on_plane = x - plane.unit_normal() * plane.metric_distance(&x);
            let (r1, j1) = plane_residual_jacobian(&plane, &on_plane);
            assert!(r1.abs() < 1e-12);
            assert_eq!(j1, j);
        }
    }

    /// Tiny two-camera scene for solver tests.
    fn toy_problem(
        rng: &mut StdRng,
        n_points: usize,
        with_plane: bool,
        pixel_noise: f64,
    ) -> (BAProblem, Vec<Pose>, Vec<Vector3<f64>>) {
        let k = intrinsics();
        let gt_poses = vec![
            Pose::identity(),
            Pose::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.05, 0.0)),
                Vector3::new(-0.2, 0.0, 0.05),
            ),
            Pose::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(0.03, -0.05, 0.0)),
                Vector3::new(0.2, 0.03, -0.05),
            ),
        ];
        let gt_points: Vec<Vector3<f64>> = (0..n_points)
            .map(|i| {
                let x = rng.gen::<f64>() - 0.5;
                let y = rng.gen::<f64>() - 0.5;
                let z = if with_plane && i < n_points / 2 {
                    2.0 // planar subset on z = 2
                } else {
                    1.5 + rng.gen::<f64>()
                };
                Vector3::new(x, y, z)
            })
            .collect();

        let mut problem = BAProblem {
            intrinsics: k,
            poses: BTreeMap::new(),
            fixed_poses: [0u32].into(),
            points: BTreeMap::new(),
            reproj_factors: Vec::new(),
            plane_factors: Vec::new(),
        };
        for (i, pose) in gt_poses.iter().enumerate() {
            problem.poses.insert(i as u32, *pose);
        }
        for (j, x) in gt_points.iter().enumerate() {
            problem.points.insert(j as u32, *x);
            for (i, pose) in gt_poses.iter().enumerate() {
                let px = project(pose, &k, x).unwrap();
                let noise = Vector2::new(
                    pixel_noise * (rng.gen::<f64>() - 0.5),
                    pixel_noise * (rng.gen::<f64>() - 0.5),
                );
                problem.reproj_factors.push(ReprojFactor {
                    keyframe: i as u32,
                    point: j as u32,
                    measured: Vector2::new(px.u, px.v) + noise,
                });
            }
        }
        if with_plane {
            let plane = Plane::new(nalgebra::Vector4::new(0.0, 0.0, 1.0, -2.0)).unwrap();
            for j in 0..n_points / 2 {
                problem.plane_factors.push(PlaneFactor {
                    point: j as u32,
                    plane,
                    active: true,
                });
            }
        }
        (problem, gt_poses, gt_points)
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let mut rng = StdRng::seed_from_u64(30);
        let (mut problem, gt_poses, gt_points) = toy_problem(&mut rng, 40, false, 0.0);
        let before_cost = total_cost(&problem, &BAConfig::default()).total;
        assert!(before_cost < 1e-12);
        let report = optimize_lm(&mut problem, &BAConfig::default(), 20).unwrap();
        assert!(report.trace.len() <= 2);
        for (i, gt) in gt_poses.iter().enumerate() {
            let diff = problem.poses[&(i as u32)].compose(&gt.inverse()).log().norm();
            assert!(diff < 1e-10);
        }
        for (j, gt) in gt_points.iter().enumerate() {
            assert!((problem.points[&(j as u32)] - gt).norm() < 1e-10);
        }
    }

    #[test]
    fn converges_from_perturbed_initialization() {
        let mut rng = StdRng::seed_from_u64(31);
        let (mut problem, _, _) = toy_problem(&mut rng, 60, false, 0.5);
        // Perturb non-fixed poses and all points.
        for id in 1..3u32 {
            let xi = Vector6::new(0.01, -0.01, 0.005, 0.01, -0.005, 0.01);
            let p = problem.poses[&id].retract(&xi);
            problem.poses.insert(id, p);
        }
        for x in problem.points.values_mut() {
            *x += Vector3::new(0.01, -0.01, 0.02);
        }
        let cfg = BAConfig::default();
        let report = optimize_lm(&mut problem, &cfg, 30).unwrap();
        assert!(report.final_cost < report.initial_cost);
        // Final RMS whitened reprojection residual at the noise level.
        let n = problem.reproj_factors.len() as f64;
        let rms = (2.0 * total_cost(&problem, &cfg).reprojection / n).sqrt();
        assert!(rms < 0.5, "rms {rms}");
        // Descent property on accepted steps.
        let mut last = f64::INFINITY;
        for row in report.trace.iter().filter(|r| r.accepted) {
            assert!(row.total_cost <= last);
            last = row.total_cost;
        }
    }

    #[test]
    fn plane_factors_pull_points_onto_plane() {
        let mut rng = StdRng::seed_from_u64(32);
        let (mut problem, _, _) = toy_problem(&mut rng, 60, true, 0.5);
        // Push planar points off their plane.
        let n_planar = problem.plane_factors.len();
        for f in problem.plane_factors.clone() {
            let x = problem.points.get_mut(&f.point).unwrap();
            *x += Vector3::new(0.0, 0.0, 0.01 * (rng.gen::<f64>() - 0.5));
        }
        let cfg = BAConfig::default();
        let mean_before: f64 = problem
            .plane_factors
            .iter()
            .map(|f| f.plane.residual(&problem.points[&f.point]).abs())
            .sum::<f64>()
            / n_planar as f64;
        optimize_lm(&mut problem, &cfg, 30).unwrap();
        let mean_after: f64 = problem
            .plane_factors
            .iter()
            .map(|f| f.plane.residual(&problem.points[&f.point]).abs())
            .sum::<f64>()
            / n_planar as f64;
        assert!(mean_after < mean_before, "{mean_after} !< {mean_before}");
    }

    #[test]
    fn cost_is_order_invariant_and_quadratic_near_plane() {
        let mut rng = StdRng::seed_from_u64(33);
        let (mut problem, _, _) = toy_problem(&mut rng, 20, true, 0.0);
        let cfg = BAConfig::default();
        assert!(total_cost(&problem, &cfg).total < 1e-12);

        // Perturb one constrained point off its plane by eps within the elbow.
        // The factor uses the homogeneous residual of the unit 4-vector, so a
        // metric offset of eps yields a residual of eps * ||(a, b, c)||.
        let pid = problem.plane_factors[0].point;
        let n_norm = problem.plane_factors[0].plane.normal().norm();
        let eps = 1e-4;
        problem.points.get_mut(&pid).unwrap()[2] += eps;
        let c = total_cost(&problem, &cfg);
        let expected_plane = 0.5 * (cfg.plane_sigma * eps * n_norm).powi(2);
        assert_relative_eq!(c.plane, expected_plane, epsilon = 1e-9);

        // Factor order does not matter.
        let mut shuffled = problem.clone();
        shuffled.reproj_factors.reverse();
        shuffled.plane_factors.reverse();
        assert_relative_eq!(total_cost(&shuffled, &cfg).total, c.total, epsilon = 1e-12);
    }

    #[test]
    fn gate_disables_gross_outliers_only() {
        let mut rng = StdRng::seed_from_u64(34);
        let (mut problem, _, _) = toy_problem(&mut rng, 40, true, 0.0);
        let cfg = BAConfig::default();
        assert!(gate_outliers(&mut problem, &cfg).is_empty());

        // 10 sigma off-plane in the whitened residual: squared 100 > 3.841.
        let n_norm = problem.plane_factors[0].plane.normal().norm();
        let victim = problem.plane_factors[2].point;
        let bump = 10.0 / (cfg.plane_sigma * n_norm);
        problem.points.get_mut(&victim).unwrap()[2] += bump;
        let disabled = gate_outliers(&mut problem, &cfg);
        assert_eq!(disabled, vec![2]);

        // Just inside the boundary stays active.
        let boundary = problem.plane_factors[3].point;
        problem.points.get_mut(&boundary).unwrap()[2] +=
            (3.840f64).sqrt() / (cfg.plane_sigma * n_norm);
        let disabled = gate_outliers(&mut problem, &cfg);
        assert_eq!(disabled, vec![2]);

        // Re-test: fixing the point re-enables its factor.
        problem.points.get_mut(&victim).unwrap()[2] -= bump;
        assert!(gate_outliers(&mut problem, &cfg).is_empty());
    }

    #[test]
    fn gauge_equivariance() {
        let mut rng = StdRng::seed_from_u64(35);
        let (mut problem, _, _) = toy_problem(&mut rng, 40, false, 0.5);
        let mut transformed = problem.clone();
        let g = Pose::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.3, -0.2, 0.1)),
            Vector3::new(1.0, -2.0, 0.5),
        );
        // World transform: X -> g X, poses T_cw -> T_cw g^-1.
        for pose in transformed.poses.values_mut() {
            *pose = pose.compose(&g.inverse());
        }
        for x in transformed.points.values_mut() {
            *x = g.transform(x);
        }
        let cfg = BAConfig::default();
        let r1 = optimize_lm(&mut problem, &cfg, 25).unwrap();
        let r2 = optimize_lm(&mut transformed, &cfg, 25).unwrap();
        assert!((r1.final_cost - r2.final_cost).abs() < 1e-9);
        // Solutions agree up to the rigid transform. The diagonal damping is
        // not rotation invariant, so the two LM paths differ slightly and the
        // iterates only agree up to the termination tolerance.
        for (id, pose) in &problem.poses {
            let back = transformed.poses[id].compose(&g);
            let diff = back.compose(&pose.inverse()).log().norm();
            assert!(diff < 2e-3, "pose {id} differs by {diff}");
        }
    }

    #[test]
    fn empty_window_rejected() {
        use crate::cluster::{ClassInfo, ClassTable};
        let map = SemanticMap::new(ClassTable {
            classes: vec![ClassInfo { name: "bg".into(), planar: false, stuff: true }],
        });
        let err = build_problem(&map, &Window::All, &intrinsics(), true);
        assert!(matches!(err, Err(BAError::EmptyWindow)));
    }
}
