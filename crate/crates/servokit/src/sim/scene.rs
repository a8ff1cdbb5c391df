//! Point scenes and initial/desired pose sampling.

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};
use servokit_core::geometry::{exp_so3, look_at, project, MIN_DEPTH};
use servokit_core::{CameraIntrinsics, Pose};

use crate::error::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub num_points: usize,
    /// Points sharing one descriptor id; 1 makes every id unique.
    pub repetition: usize,
    /// Half side of the square support, in units of the scene scale.
    pub half_extent: f64,
    /// Height perturbation amplitude, in units of the scene scale.
    pub roughness: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_points: 200,
            repetition: 1,
            half_extent: 0.35,
            roughness: 0.03,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_points == 0 {
            return Err(SimError::InvalidConfig("scene needs at least one point".into()));
        }
        if self.repetition == 0 {
            return Err(SimError::InvalidConfig("repetition factor must be at least 1".into()));
        }
        if !(self.half_extent > 0.0) || !(self.roughness >= 0.0) {
            return Err(SimError::InvalidConfig("scene extent must be positive and roughness non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

/// World-frame points on a rough ground plane (z up) with descriptor ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<[f64; 3]>,
    pub descriptor_ids: Vec<u32>,
    /// Desired mean depth d* in meters.
    pub scale: f64,
    pub bounds: Bounds,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.points.is_empty() {
            return Err(SimError::InvalidConfig("scene has no points".into()));
        }
        if self.points.len() != self.descriptor_ids.len() {
            return Err(SimError::InvalidConfig("one descriptor id per point is required".into()));
        }
        if !(self.scale > 0.0) {
            return Err(SimError::InvalidConfig("scene scale must be positive".into()));
        }
        if !self.points.iter().all(|p| self.bounds.contains(p)) {
            return Err(SimError::InvalidConfig("point outside the scene bounds".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.points[i])
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p));
        sum / self.points.len() as f64
    }

    pub fn distinct_ids(&self) -> usize {
        let mut ids = self.descriptor_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

pub fn generate_scene(cfg: &SceneConfig, scale: f64, seed: u64) -> Result<Scene, SimError> {
    cfg.validate()?;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(SimError::InvalidConfig("scene scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.half_extent * scale;
    let r = cfg.roughness * scale;
    let points: Vec<[f64; 3]> = (0..cfg.num_points)
        .map(|_| {
            let z = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
            [rng.random_range(-h..=h), rng.random_range(-h..=h), z]
        })
        .collect();
    let mut perm: Vec<u32> = (0..cfg.num_points as u32).collect();
    perm.shuffle(&mut rng);
    let rep = cfg.repetition as u32;
    let descriptor_ids = perm.iter().map(|&p| p / rep).collect();
    Ok(Scene {
        points,
        descriptor_ids,
        scale,
        bounds: Bounds {
            min: [-h, -h, -r],
            max: [h, h, r],
        },
    })
}

/// Camera-frame depth and pixel of every point, `None` when behind the camera
/// or outside the image.
pub fn project_scene(scene: &Scene, world_from_camera: &Pose, intr: &CameraIntrinsics) -> Vec<Option<(Vector2<f64>, f64)>> {
    let camera_from_world = world_from_camera.inverse();
    scene
        .points
        .iter()
        .map(|p| {
            let pc = camera_from_world.transform_point(&Vector3::from(*p));
            if pc.z <= MIN_DEPTH {
                return None;
            }
            let px = project(&pc, intr).ok()?;
            intr.contains_pixel(&px).then_some((px, pc.z))
        })
        .collect()
}

pub fn visible_fraction(scene: &Scene, world_from_camera: &Pose, intr: &CameraIntrinsics) -> f64 {
    let n = project_scene(scene, world_from_camera, intr).iter().filter(|p| p.is_some()).count();
    n as f64 / scene.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Initial rotation error range in degrees.
    pub rotation_deg: [f64; 2],
    /// Initial translation error range in millimeters at unit scene scale.
    pub translation_mm: [f64; 2],
    /// Elevation of the desired viewpoint above the ground plane, degrees.
    pub elevation_deg: [f64; 2],
    pub min_visible_fraction: f64,
    pub max_attempts: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            rotation_deg: [30.146, 172.127],
            translation_mm: [62.527, 265.812],
            elevation_deg: [50.0, 90.0],
            min_visible_fraction: 0.5,
            max_attempts: 1000,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ordered = |r: [f64; 2]| r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite();
        if !ordered(self.rotation_deg) || self.rotation_deg[1] >= 180.0 {
            return Err(SimError::InvalidConfig("rotation range must satisfy 0 <= lo <= hi < 180".into()));
        }
        if !ordered(self.translation_mm) {
            return Err(SimError::InvalidConfig("translation range must satisfy 0 <= lo <= hi".into()));
        }
        if !ordered(self.elevation_deg) || self.elevation_deg[0] <= 0.0 || self.elevation_deg[1] > 90.0 {
            return Err(SimError::InvalidConfig("elevation range must lie in (0, 90]".into()));
        }
        if !(0.0..=1.0).contains(&self.min_visible_fraction) || self.max_attempts == 0 {
            return Err(SimError::InvalidConfig("visible fraction must be in [0, 1] and attempts >= 1".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from(UnitSphere.sample(rng))
}

/// `(initial, desired)` world-from-camera poses.
///
/// The desired camera sits at distance `d*` from the scene centroid, above the
/// plane, looking at the centroid with a random roll. The initial pose is the
/// desired pose composed with a rotation of sampled angle about a uniformly
/// random axis and a translation of sampled length in a random direction.
pub fn sample_pose_pair(
    scene: &Scene,
    intr: &CameraIntrinsics,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<(Pose, Pose), SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroid = scene.centroid();
    for _ in 0..cfg.max_attempts {
        let elevation = uniform(&mut rng, cfg.elevation_deg).to_radians();
        let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
        let roll = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let dir = Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin());
        let eye = centroid + dir * scene.scale;
        let up = if elevation > 89.0f64.to_radians() { Vector3::y() } else { Vector3::z() };
        let desired = Pose::new(look_at(&eye, &centroid, &up, roll), eye);

        let angle = uniform(&mut rng, cfg.rotation_deg).to_radians();
        let axis = unit(&mut rng);
        let dist = uniform(&mut rng, cfg.translation_mm) * 1e-3 * scene.scale;
        let offset_dir = unit(&mut rng);
        let offset = Pose::new(exp_so3(&(axis * angle)), offset_dir * dist);
        let initial = desired * offset;

        if visible_fraction(scene, &desired, intr) >= cfg.min_visible_fraction
            && visible_fraction(scene, &initial, intr) >= cfg.min_visible_fraction
        {
            return Ok((initial, desired));
        }
    }
    Err(SimError::SamplingExhausted(cfg.max_attempts))
}
