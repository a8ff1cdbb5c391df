//! Velocity control laws.
//!
//! All poses passed to the controllers are `desired_from_current`
//! (`R = ᵈᶜR`, `t = ᵈt_c`) and all twists are expressed in the current camera
//! frame, ordered `[ν; ω]`.

use nalgebra::{Matrix3, Matrix6, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::epipolar::{decompose_essential, EssentialMatrix};
use crate::geometry::{
    exp_so3, log_so3, rotation_distance, skew, CameraIntrinsics, GeometryError, Pose, Twist, DEFAULT_DT,
};

/// Largest accepted condition number of the hybrid Jacobian.
pub const MAX_JACOBIAN_CONDITION: f64 = 1e10;

/// Translations shorter than this are treated as zero when refocusing a pose.
pub const MIN_TRANSLATION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("rotation magnitude {0} rad is not below π")]
    RotationOutOfRange(f64),
    #[error("essential matrix could not be decomposed")]
    DegenerateEssential,
    #[error("hybrid Jacobian is singular (condition {0:e})")]
    SingularJacobian(f64),
    #[error("velocity norm must be positive, got {0}")]
    NonPositiveNorm(f64),
    #[error("direction vector has zero length")]
    ZeroDirection,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlGains {
    /// Error decay rate λ in 1/s.
    pub lambda: f64,
    pub switch_threshold_factor: f64,
    /// Control period in seconds.
    pub dt: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            switch_threshold_factor: 0.1,
            dt: DEFAULT_DT,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(ControlError::InvalidParameter("lambda must be positive"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(ControlError::InvalidParameter("dt must be positive"));
        }
        if !(self.switch_threshold_factor >= 0.0) {
            return Err(ControlError::InvalidParameter("switch threshold factor must be non-negative"));
        }
        Ok(())
    }
}

/// Output saturation, applied separately to the linear and angular parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityLimits {
    /// m/s
    pub max_linear: f64,
    /// rad/s
    pub max_angular: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self {
            max_linear: 0.5,
            max_angular: 1.0,
        }
    }
}

impl VelocityLimits {
    pub fn clamp(&self, twist: &Twist) -> Twist {
        fn cap(v: Vector3<f64>, max: f64) -> Vector3<f64> {
            let n = v.norm();
            if n > max {
                v * (max / n)
            } else {
                v
            }
        }
        Twist::new(cap(twist.linear, self.max_linear), cap(twist.angular, self.max_angular))
    }
}

/// `ν = −λ Rᵀ t`, `ω = −λ θu`.
pub fn pbvs(rel: &Pose, lambda: f64) -> Twist {
    let theta_u = log_so3(&rel.rotation);
    Twist::new(-lambda * (rel.rotation.transpose() * rel.translation), -lambda * theta_u)
}

/// Pose whose [`pbvs`] output is `twist`.
pub fn inverse_pbvs(twist: &Twist, lambda: f64) -> Result<Pose, ControlError> {
    if !(lambda > 0.0) {
        return Err(ControlError::InvalidParameter("lambda must be positive"));
    }
    let angle = twist.angular.norm() / lambda;
    if !(angle < core::f64::consts::PI) {
        return Err(ControlError::RotationOutOfRange(angle));
    }
    let r = exp_so3(&(-twist.angular / lambda));
    Ok(Pose::new(r, -(r * twist.linear) / lambda))
}

/// Canonical and real cameras plus the scene scale `d*` (desired mean depth, m).
///
/// The focal ratio `s_f = f_real / f_canon` is taken from `fx`; the principal
/// points are assumed to coincide after scaling, so the canonical reading of a
/// real normalized point `x` is `S x` with `S = diag(s_f, s_f, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenormParams {
    pub canonical: CameraIntrinsics,
    pub real: CameraIntrinsics,
    pub scene_scale: f64,
}

impl DenormParams {
    pub fn new(canonical: CameraIntrinsics, real: CameraIntrinsics, scene_scale: f64) -> Result<Self, ControlError> {
        canonical.validate()?;
        real.validate()?;
        if !(scene_scale > 0.0) || !scene_scale.is_finite() {
            return Err(ControlError::InvalidParameter("scene scale must be positive"));
        }
        Ok(Self {
            canonical,
            real,
            scene_scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            canonical: CameraIntrinsics::canonical(),
            real: CameraIntrinsics::canonical(),
            scene_scale: 1.0,
        }
    }

    pub fn focal_ratio(&self) -> f64 {
        self.real.fx / self.canonical.fx
    }

    pub fn is_identity(&self) -> bool {
        self.focal_ratio() == 1.0 && self.scene_scale == 1.0
    }
}

/// Re-reads `(r, t)` through `E' = k·Mᵀ t^ R M` and picks the decomposition
/// whose rotation is nearest `r` and whose translation points along `sign_ref`.
fn refocus(r: &Matrix3<f64>, t: &Vector3<f64>, m: &Matrix3<f64>, k: f64, sign_ref: &Vector3<f64>) -> Result<Pose, ControlError> {
    if t.norm() < MIN_TRANSLATION {
        return Ok(Pose::new(*r, Vector3::zeros()));
    }
    let e = m.transpose() * skew(t) * r * m * k;
    let candidates = decompose_essential(&EssentialMatrix::project(&e)).map_err(|_| ControlError::DegenerateEssential)?;
    let best = candidates
        .iter()
        .filter(|c| c.translation.dot(sign_ref) >= 0.0)
        .min_by(|a, b| {
            rotation_distance(&a.rotation, r)
                .partial_cmp(&rotation_distance(&b.rotation, r))
                .unwrap_or(core::cmp::Ordering::Equal)
        })
        .ok_or(ControlError::DegenerateEssential)?;
    Ok(*best)
}

/// Real-world pose from a pose expressed in the canonical camera at unit scale.
///
/// With `s_f = 1` this is `(R̃, d*·t̃)`. Otherwise `Ê = Sᵀ t̃^ R̃ S` is projected
/// onto the essential manifold and decomposed; the translation is rescaled by
/// `d* / s_f²`. A zero translation passes the rotation through unchanged.
pub fn denormalize_pose(canon: &Pose, p: &DenormParams) -> Result<Pose, ControlError> {
    let s = p.focal_ratio();
    if s == 1.0 {
        return Ok(Pose::new(canon.rotation, canon.translation * p.scene_scale));
    }
    let m = Matrix3::from_diagonal(&Vector3::new(s, s, 1.0));
    let m_inv = Matrix3::from_diagonal(&Vector3::new(1.0 / s, 1.0 / s, 1.0));
    let sign_ref = m_inv * canon.translation;
    let pose = refocus(&canon.rotation, &canon.translation, &m, 1.0, &sign_ref)?;
    Ok(Pose::new(pose.rotation, pose.translation * (p.scene_scale / (s * s))))
}

/// Inverse of [`denormalize_pose`]: how a real relative pose reads in the
/// canonical camera at unit scale.
///
/// Exact for rotations about the optical axis (which commute with `S`); for
/// other rotations the nearest essential reading is returned.
pub fn canonicalize_pose(real: &Pose, p: &DenormParams) -> Result<Pose, ControlError> {
    let s = p.focal_ratio();
    let t = real.translation / p.scene_scale;
    if s == 1.0 {
        return Ok(Pose::new(real.rotation, t));
    }
    let m_inv = Matrix3::from_diagonal(&Vector3::new(1.0 / s, 1.0 / s, 1.0));
    let sign_ref = Vector3::new(s * t.x, s * t.y, t.z);
    refocus(&real.rotation, &t, &m_inv, s * s, &sign_ref)
}

/// Maps a twist computed in the canonical frame to the real camera and scale.
pub fn denormalize_velocity(twist_norm: &Twist, p: &DenormParams, lambda: f64) -> Result<Twist, ControlError> {
    let canon = inverse_pbvs(twist_norm, lambda)?;
    let real = denormalize_pose(&canon, p)?;
    Ok(pbvs(&real, lambda))
}

/// Maps a real twist to its canonical-frame counterpart.
pub fn canonicalize_velocity(twist: &Twist, p: &DenormParams, lambda: f64) -> Result<Twist, ControlError> {
    let real = inverse_pbvs(twist, lambda)?;
    let canon = canonicalize_pose(&real, p)?;
    Ok(pbvs(&canon, lambda))
}

/// `e = [t; Xg_c − Xg_d; θu_z]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HybridError(pub Vector6<f64>);

impl HybridError {
    pub fn new(rel: &Pose, xg_c: &Vector2<f64>, xg_d: &Vector2<f64>) -> Self {
        let d = xg_c - xg_d;
        let theta_u = log_so3(&rel.rotation);
        let t = rel.translation;
        Self(Vector6::new(t.x, t.y, t.z, d.x, d.y, theta_u.z))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Inverse right Jacobian of SO(3) at `φ`: `d log(R exp(δ)) / dδ` at 0.
pub fn right_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let (s, c) = theta.sin_cos();
        1.0 / (theta * theta) - (1.0 + c) / (2.0 * theta * s)
    };
    Matrix3::identity() + k * 0.5 + k * k * coeff
}

/// Interaction matrix of a patch-unit image point at depth `depth`.
fn point_interaction(x_patch: &Vector2<f64>, depth: f64, intr: &CameraIntrinsics) -> nalgebra::Matrix2x6<f64> {
    let p = f64::from(intr.patch_size);
    let x = ((x_patch.x + 0.5) * p - intr.cx) / intr.fx;
    let y = ((x_patch.y + 0.5) * p - intr.cy) / intr.fy;
    let inv_z = 1.0 / depth;
    let (ax, ay) = (intr.fx / p, intr.fy / p);
    #[rustfmt::skip]
    let m = nalgebra::Matrix2x6::new(
        -ax * inv_z, 0.0, ax * x * inv_z, ax * x * y, -ax * (1.0 + x * x), ax * y,
        0.0, -ay * inv_z, ay * y * inv_z, ay * (1.0 + y * y), -ay * x * y, -ay * x,
    );
    m
}

/// Jacobian of [`HybridError`] with respect to the current-frame twist.
///
/// Rows 1–3 are `[R | 0]`, rows 4–5 the interaction matrix of the current
/// gravity center at `depth_est`, row 6 `[0 | third row of J_r⁻¹(θu)]`.
pub fn hybrid_jacobian(rel: &Pose, xg_c: &Vector2<f64>, depth_est: f64, intr: &CameraIntrinsics) -> Matrix6<f64> {
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&rel.rotation);
    j.fixed_view_mut::<2, 6>(3, 0).copy_from(&point_interaction(xg_c, depth_est, intr));
    let jr = right_jacobian_inverse(&log_so3(&rel.rotation));
    j.fixed_view_mut::<1, 3>(5, 3).copy_from(&jr.row(2));
    j
}

/// `v = −λ J⁻¹ e`.
pub fn hybrid_control(
    rel: &Pose,
    xg_c: &Vector2<f64>,
    xg_d: &Vector2<f64>,
    depth_est: f64,
    lambda: f64,
    intr: &CameraIntrinsics,
) -> Result<Twist, ControlError> {
    if !(depth_est > 0.0) {
        return Err(ControlError::InvalidParameter("depth estimate must be positive"));
    }
    let e = HybridError::new(rel, xg_c, xg_d);
    let j = hybrid_jacobian(rel, xg_c, depth_est, intr);
    let sv = j.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond < MAX_JACOBIAN_CONDITION) {
        return Err(ControlError::SingularJacobian(cond));
    }
    let v = j.lu().solve(&e.0).ok_or(ControlError::SingularJacobian(f64::INFINITY))?;
    Ok(Twist::from_vector(&(v * -lambda)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControlMode {
    Hybrid,
    Pbvs,
}

/// Hybrid iff `‖Xg_c − Xg_d‖ > factor·√N16`.
pub fn select_mode_with(xg_c: &Vector2<f64>, xg_d: &Vector2<f64>, n16: usize, factor: f64) -> ControlMode {
    if (xg_c - xg_d).norm() > factor * (n16 as f64).sqrt() {
        ControlMode::Hybrid
    } else {
        ControlMode::Pbvs
    }
}

pub fn select_mode(xg_c: &Vector2<f64>, xg_d: &Vector2<f64>, n16: usize) -> ControlMode {
    select_mode_with(xg_c, xg_d, n16, 0.1)
}

/// Per-episode mode state; once PBVS is selected it stays selected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ModeLatch {
    latched: bool,
}

impl ModeLatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, proposed: ControlMode) -> ControlMode {
        if proposed == ControlMode::Pbvs {
            self.latched = true;
        }
        if self.latched {
            ControlMode::Pbvs
        } else {
            ControlMode::Hybrid
        }
    }

    pub fn is_latched(&self) -> bool {
        self.latched
    }
}

/// `σ(x) = e^{x−1}` for `x ≤ 1`, `x` otherwise.
pub fn sigma(x: f64) -> f64 {
    if x <= 1.0 {
        (x - 1.0).exp()
    } else {
        x
    }
}

pub fn sigma_inv(y: f64) -> Result<f64, ControlError> {
    if !(y > 0.0) {
        return Err(ControlError::NonPositiveNorm(y));
    }
    Ok(if y <= 1.0 { 1.0 + y.ln() } else { y })
}

/// Log-norm and direction encoding of a twist.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityParam {
    pub log_norm: f64,
    pub direction: Vector6<f64>,
}

impl VelocityParam {
    pub fn encode(twist: &Twist) -> Result<Self, ControlError> {
        let v = twist.to_vector();
        let n = v.norm();
        Ok(Self {
            log_norm: sigma_inv(n)?,
            direction: v / n,
        })
    }
}

/// `σ(l̃)·ṽ_dir/‖ṽ_dir‖`.
pub fn decode_velocity(p: &VelocityParam) -> Result<Twist, ControlError> {
    let n = p.direction.norm();
    if !(n > 1e-12) {
        return Err(ControlError::ZeroDirection);
    }
    Ok(Twist::from_vector(&(p.direction * (sigma(p.log_norm) / n))))
}

/// `|σ⁻¹(‖ṽ*‖) − l̃|`.
pub fn loss_norm(target: &Twist, log_norm: f64) -> Result<f64, ControlError> {
    Ok((sigma_inv(target.to_vector().norm())? - log_norm).abs())
}

/// `1 − cos(ṽ*, ṽ)`.
pub fn loss_dir(target: &Twist, predicted: &Twist) -> Result<f64, ControlError> {
    let (a, b) = (target.to_vector(), predicted.to_vector());
    // identical summation order for the three sums, so `b = ±a` gives exactly 0 or 2
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if !(aa > 0.0) || !(bb > 0.0) {
        return Err(ControlError::ZeroDirection);
    }
    Ok(1.0 - (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}
