//! SE(3) poses, pinhole projection and homogeneous planes.
//!
//! A [`Pose`] is the camera-from-world transform `T_cw`: applying it to a
//! world point yields camera coordinates. Tangent vectors for [`Pose::exp`] /
//! [`Pose::log`] are laid out `[omega, rho]` (rotation first, translation
//! second).
//!
//! Planes are stored as a unit 4-vector `pi = (a, b, c, d)` with `||pi|| = 1`.
//! [`Plane::residual`] returns the raw homogeneous product `pi . (X, 1)`,
//! which is what the bundle adjustment regularizer uses; RANSAC inlier tests
//! use [`Plane::metric_distance`], which divides by `||(a, b, c)||` so that
//! thresholds stay in meters.

use nalgebra::{Matrix2x3, Matrix3, Matrix4, UnitQuaternion, Vector2, Vector3, Vector4, Vector6};
use thiserror::Error;

/// Minimum camera-frame depth for a projectable point, in meters.
pub const Z_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point behind camera (z = {z:.6} <= {Z_MIN})")]
    BehindCamera { z: f64 },
    #[error("plane normal has near-zero norm (plane at infinity)")]
    PlaneAtInfinity,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Rigid camera-from-world transform `T_cw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(*rotation.quaternion()),
            translation,
        }
    }

    /// `self * other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: UnitQuaternion::new_normalize(
                *(self.rotation * other.rotation).quaternion(),
            ),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    /// Apply the transform to a world point, yielding camera coordinates.
    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation.to_rotation_matrix().into_inner());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Camera center expressed in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// SE(3) exponential map, tangent layout `[omega, rho]`.
    pub fn exp(xi: &Vector6<f64>) -> Pose {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let rho = Vector3::new(xi[3], xi[4], xi[5]);
        let theta = omega.norm();
        let rotation = UnitQuaternion::from_scaled_axis(omega);
        let v = left_jacobian_so3(&omega, theta);
        Pose {
            rotation,
            translation: v * rho,
        }
    }

    /// SE(3) logarithm, inverse of [`Pose::exp`] for `||omega|| < pi`.
    pub fn log(&self) -> Vector6<f64> {
        let omega = self.rotation.scaled_axis();
        let theta = omega.norm();
        let v = left_jacobian_so3(&omega, theta);
        let v_inv = v.try_inverse().expect("left Jacobian is invertible for theta < 2*pi");
        let rho = v_inv * self.translation;
        Vector6::new(omega[0], omega[1], omega[2], rho[0], rho[1], rho[2])
    }

    /// Left-multiplicative retraction: `exp(xi) * self`, quaternion renormalized.
    pub fn retract(&self, xi: &Vector6<f64>) -> Pose {
        let p = Pose::exp(xi).compose(self);
        Pose::new(p.rotation, p.translation)
    }
}

/// SO(3) left Jacobian, which doubles as the `V` matrix of the SE(3) exp map.
fn left_jacobian_so3(omega: &Vector3<f64>, theta: f64) -> Matrix3<f64> {
    let k = skew(omega);
    if theta < 1e-10 {
        Matrix3::identity() + 0.5 * k + (1.0 / 6.0) * k * k
    } else {
        let t2 = theta * theta;
        Matrix3::identity()
            + ((1.0 - theta.cos()) / t2) * k
            + ((theta - theta.sin()) / (t2 * theta)) * k * k
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Pinhole camera model without distortion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if cx <= 0.0 || cx >= width as f64 || cy <= 0.0 || cy >= height as f64 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside image {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.u < self.width as f64 && px.v >= 0.0 && px.v < self.height as f64
    }
}

/// Image point `(u, v)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn vector(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Project a world point into the image. Errors if the camera-frame depth is
/// at or below [`Z_MIN`]; points behind the camera are never clamped.
pub fn project(pose: &Pose, k: &CameraIntrinsics, x_world: &Vector3<f64>) -> Result<Pixel, GeometryError> {
    let xc = pose.transform(x_world);
    if xc[2] <= Z_MIN {
        return Err(GeometryError::BehindCamera { z: xc[2] });
    }
    Ok(Pixel::new(
        k.fx * xc[0] / xc[2] + k.cx,
        k.fy * xc[1] / xc[2] + k.cy,
    ))
}

/// Back-project a pixel at a given camera-frame depth into world coordinates.
pub fn unproject(pose: &Pose, k: &CameraIntrinsics, px: &Pixel, depth: f64) -> Vector3<f64> {
    let xc = Vector3::new(
        (px.u - k.cx) / k.fx * depth,
        (px.v - k.cy) / k.fy * depth,
        depth,
    );
    pose.inverse().transform(&xc)
}

/// Jacobian of the pinhole projection with respect to the camera-frame point.
pub fn projection_jacobian(k: &CameraIntrinsics, xc: &Vector3<f64>) -> Matrix2x3<f64> {
    let z = xc[2];
    let z2 = z * z;
    Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * xc[0] / z2,
        0.0,
        k.fy / z,
        -k.fy * xc[1] / z2,
    )
}

/// Homogeneous plane `(a, b, c, d)` with `||pi||_2 = 1` and `d <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Plane {
    pi: Vector4<f64>,
}

impl Plane {
    /// Normalize a raw 4-vector into the canonical representation.
    pub fn new(raw: Vector4<f64>) -> Result<Self, GeometryError> {
        let norm = raw.norm();
        if norm < 1e-12 {
            return Err(GeometryError::PlaneAtInfinity);
        }
        let mut pi = raw / norm;
        if pi.fixed_rows::<3>(0).norm() <= 1e-6 {
            return Err(GeometryError::PlaneAtInfinity);
        }
        // Sign convention: d <= 0, with the first nonzero normal component
        // positive when d == 0, so equal planes always normalize identically.
        let flip = if pi[3] > 0.0 {
            true
        } else if pi[3] == 0.0 {
            let first = (0..3).map(|i| pi[i]).find(|v| *v != 0.0).unwrap_or(1.0);
            first < 0.0
        } else {
            false
        };
        if flip {
            pi = -pi;
        }
        Ok(Self { pi })
    }

    /// Plane through a point with the given normal direction.
    pub fn from_point_normal(point: &Vector3<f64>, normal: &Vector3<f64>) -> Result<Self, GeometryError> {
        let d = -normal.dot(point);
        Plane::new(Vector4::new(normal[0], normal[1], normal[2], d))
    }

    pub fn coefficients(&self) -> Vector4<f64> {
        self.pi
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.pi[0], self.pi[1], self.pi[2])
    }

    pub fn offset(&self) -> f64 {
        self.pi[3]
    }

    /// Unit-length normal direction.
    pub fn unit_normal(&self) -> Vector3<f64> {
        let n = self.normal();
        n / n.norm()
    }

    /// Raw homogeneous residual `pi . (X, 1)`. This is what the BA
    /// regularizer minimizes.
    pub fn residual(&self, x: &Vector3<f64>) -> f64 {
        self.pi[0] * x[0] + self.pi[1] * x[1] + self.pi[2] * x[2] + self.pi[3]
    }

    /// Signed point-plane distance in meters: residual divided by the norm of
    /// the normal part. Used for RANSAC inlier gating and far-point pruning.
    pub fn metric_distance(&self, x: &Vector3<f64>) -> f64 {
        self.residual(x) / self.normal().norm()
    }
}
