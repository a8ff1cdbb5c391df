//! Rigid-body poses, pinhole cameras, axis-angle rotations and twist integration.
//!
//! Poses map points from their own frame into the parent frame:
//! `p_parent = rotation * p_child + translation`. A camera pose stored as
//! `world_from_camera` therefore transforms camera-frame points into the world.
//! Cameras look down their +z axis with +x to the right and +y down.

use core::f64::consts::PI;
use core::ops::Mul;

use nalgebra::{Matrix3, Vector2, Vector3, Vector6};
use thiserror::Error;

/// Default integration step for closed-loop simulation, seconds.
pub const DEFAULT_DT: f64 = 0.05;

/// Points closer than this to the image plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point depth {0} is not in front of the camera")]
    NonPositiveDepth(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("rotation is not orthonormal with det +1 (orthogonality error {0:e})")]
    NotARotation(f64),
    #[error("integration step must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// Skew-symmetric matrix `v^` such that `v^ * w = v x w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] applied to the skew part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Frobenius norm of `RᵀR - I`.
pub fn orthogonality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Rigid transform with a 3x3 rotation matrix and a translation in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose without validating the rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose, rejecting matrices that are not proper rotations.
    pub fn try_new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let err = orthogonality_error(&rotation);
        if !(err < 1e-9) || rotation.determinant() <= 0.0 {
            return Err(GeometryError::NotARotation(err));
        }
        Ok(Self::new(rotation, translation))
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Geodesic rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_to_axis_angle(&self.rotation).angle
    }

    /// Projects the rotation back onto SO(3) with one Newton polar step.
    /// Only meant for removing accumulated rounding drift.
    pub fn renormalized(&self) -> Pose {
        let r = self.rotation;
        let r = r * (Matrix3::identity() * 3.0 - r.transpose() * r) * 0.5;
        Pose::new(r, self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Pose of the current camera expressed in the desired camera frame.
pub fn relative_pose(world_from_current: &Pose, world_from_desired: &Pose) -> Pose {
    world_from_desired.inverse().compose(world_from_current)
}

/// Pinhole intrinsics plus image and patch-grid dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub patch_size: u32,
}

impl CameraIntrinsics {
    pub const DEFAULT_PATCH_SIZE: u32 = 16;

    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        patch_size: u32,
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            patch_size,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Square image of side `size` with the principal point at its center.
    pub fn centered(focal: f64, size: u32) -> Result<Self, GeometryError> {
        let c = f64::from(size) / 2.0;
        Self::new(focal, focal, c, c, size, size, Self::DEFAULT_PATCH_SIZE)
    }

    /// The canonical training camera: f = 512, c = 256, 512x512, 16-pixel patches.
    pub fn canonical() -> Self {
        Self {
            fx: 512.0,
            fy: 512.0,
            cx: 256.0,
            cy: 256.0,
            width: 512,
            height: 512,
            patch_size: Self::DEFAULT_PATCH_SIZE,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("principal point must be finite"));
        }
        if self.patch_size == 0 || self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image and patch sizes must be nonzero"));
        }
        if !self.width.is_multiple_of(self.patch_size) || !self.height.is_multiple_of(self.patch_size) {
            return Err(GeometryError::InvalidIntrinsics(
                "image dimensions must be divisible by the patch size",
            ));
        }
        Ok(())
    }

    /// Patch-grid rows (H16).
    pub fn grid_rows(&self) -> usize {
        (self.height / self.patch_size) as usize
    }

    /// Patch-grid columns (W16).
    pub fn grid_cols(&self) -> usize {
        (self.width / self.patch_size) as usize
    }

    pub fn patch_count(&self) -> usize {
        self.grid_rows() * self.grid_cols()
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel position of the center of patch `(col, row)`.
    pub fn patch_center_pixel(&self, col: f64, row: f64) -> Vector2<f64> {
        let p = f64::from(self.patch_size);
        Vector2::new((col + 0.5) * p, (row + 0.5) * p)
    }

    /// Continuous patch coordinate of a pixel (inverse of [`Self::patch_center_pixel`]).
    pub fn pixel_to_patch(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        let p = f64::from(self.patch_size);
        Vector2::new(pixel.x / p - 0.5, pixel.y / p - 0.5)
    }

    pub fn contains_pixel(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < f64::from(self.width)
            && pixel.y < f64::from(self.height)
    }
}

/// Projects a camera-frame point to pixels. No clipping to the image bounds.
pub fn project(point: &Vector3<f64>, intr: &CameraIntrinsics) -> Result<Vector2<f64>, GeometryError> {
    if !(point.z > MIN_DEPTH) {
        return Err(GeometryError::NonPositiveDepth(point.z));
    }
    Ok(Vector2::new(
        intr.fx * point.x / point.z + intr.cx,
        intr.fy * point.y / point.z + intr.cy,
    ))
}

/// Maps a pixel onto the normalized image plane `z = 1`.
pub fn normalize_pixel(pixel: &Vector2<f64>, intr: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new((pixel.x - intr.cx) / intr.fx, (pixel.y - intr.cy) / intr.fy, 1.0)
}

/// Axis-angle rotation with `angle` in `[0, π]`.
///
/// The zero rotation is stored as angle 0 with the +z axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    pub axis: Vector3<f64>,
    pub angle: f64,
}

impl AxisAngle {
    pub fn identity() -> Self {
        Self {
            axis: Vector3::z(),
            angle: 0.0,
        }
    }

    /// Normalizes the axis; a zero vector gives the identity. Angles outside
    /// `[0, π]` are folded back into range.
    pub fn new(axis: Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation_vector(&(axis.normalize() * angle))
    }

    /// Builds from `θu`. Norms above π are wrapped to the equivalent rotation.
    pub fn from_rotation_vector(v: &Vector3<f64>) -> Self {
        let theta = v.norm();
        if !(theta > 0.0) {
            return Self::identity();
        }
        let mut axis = v / theta;
        let mut angle = theta % (2.0 * PI);
        if angle > PI {
            angle = 2.0 * PI - angle;
            axis = -axis;
        }
        if angle == 0.0 {
            return Self::identity();
        }
        Self { axis, angle }
    }

    /// `θu`.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.axis * self.angle
    }
}

/// Logarithm of a rotation matrix.
///
/// Uses `atan2(|vee(R)|, (tr R - 1)/2)` for the angle so small and large angles
/// keep full precision. Within 1e-4 rad of π the axis comes from the column of
/// `uuᵀ` with the largest diagonal (ties go to the smallest index); its sign
/// follows the skew part, and at π (skew part below 1e-12) the selected
/// component is positive.
pub fn rotation_to_axis_angle(r: &Matrix3<f64>) -> AxisAngle {
    let w = vee(r);
    let s = w.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let angle = s.atan2(c);
    if !(angle > 0.0) {
        return AxisAngle::identity();
    }
    let axis = if angle > PI - 1e-4 {
        let sym = (r + r.transpose()) * 0.5;
        let uut = (sym - Matrix3::identity() * c) / (1.0 - c);
        let mut k = 0;
        for i in 1..3 {
            if uut[(i, i)] > uut[(k, k)] {
                k = i;
            }
        }
        let mut u: Vector3<f64> = uut.column(k) / uut[(k, k)].max(0.0).sqrt();
        u.normalize_mut();
        if s > 1e-12 && u.dot(&w) < 0.0 {
            u = -u;
        }
        u
    } else {
        w / s
    };
    AxisAngle { axis, angle }
}

/// Rodrigues' formula.
pub fn axis_angle_to_rotation(aa: &AxisAngle) -> Matrix3<f64> {
    exp_so3(&aa.rotation_vector())
}

/// Coefficients `(sinθ/θ, (1-cosθ)/θ², (θ-sinθ)/θ³)` with series fallbacks.
fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Exponential map from a rotation vector to a rotation matrix.
pub fn exp_so3(v: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b, _) = exp_coefficients(v.norm());
    let k = skew(v);
    Matrix3::identity() + k * a + k * k * b
}

/// Logarithm map to a rotation vector with norm in `[0, π]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    rotation_to_axis_angle(r).rotation_vector()
}

/// Geodesic distance between two rotations, radians.
pub fn rotation_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_to_axis_angle(&(a.transpose() * b)).angle
}

/// Camera velocity expressed in the current camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist {
    /// m/s.
    pub linear: Vector3<f64>,
    /// rad/s.
    pub angular: Vector3<f64>,
}

impl Default for Twist {
    fn default() -> Self {
        Self::zero()
    }
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// `[ν; ω]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.linear * k, self.angular * k)
    }

    pub fn neg(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

/// SE(3) exponential of the twist `(ρ, φ)` (translation part, rotation vector).
pub fn exp_se3(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Pose {
    let (a, b, c) = exp_coefficients(phi.norm());
    let k = skew(phi);
    let k2 = k * k;
    let rotation = Matrix3::identity() + k * a + k2 * b;
    let v = Matrix3::identity() + k * b + k2 * c;
    Pose::new(rotation, v * rho)
}

/// Moves a `world_from_camera` pose by a camera-frame twist held for `dt` seconds.
pub fn integrate_twist(pose: &Pose, twist: &Twist, dt: f64) -> Result<Pose, GeometryError> {
    if !(dt > 0.0) {
        return Err(GeometryError::NonPositiveStep(dt));
    }
    let step = exp_se3(&(twist.linear * dt), &(twist.angular * dt));
    Ok(pose.compose(&step).renormalized())
}

/// Rotation matrix that makes a camera at `eye` look at `target`, with `roll`
/// radians about the optical axis. `up` picks the image "up" direction before roll.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>, roll: f64) -> Matrix3<f64> {
    let z = (target - eye).normalize();
    let mut x = (-up).cross(&z);
    if x.norm() < 1e-9 {
        x = Vector3::x().cross(&z);
        if x.norm() < 1e-9 {
            x = Vector3::y().cross(&z);
        }
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let base = Matrix3::from_columns(&[x, y, z]);
    base * exp_so3(&(Vector3::z() * roll))
}
