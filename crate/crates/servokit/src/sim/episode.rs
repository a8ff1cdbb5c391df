//! Episode configuration and the closed loop.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use servokit_core::geometry::{integrate_twist, relative_pose};
use servokit_core::{
    CameraIntrinsics, ControlGains, ControlMode, DenormParams, Pose, Twist, VelocityLimits,
};

use super::controller::{CanonicalMode, Controller, ControllerKind, ModeOverride};
use super::observe::{observe, NoiseModel};
use super::scene::{generate_scene, sample_pose_pair, visible_fraction, SamplingConfig, Scene, SceneConfig};
use crate::error::SimError;
use crate::seeds::{derive_seed, EpisodeSeeds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    pub patch_size: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            focal: 512.0,
            width: 512,
            height: 512,
            patch_size: 16,
        }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, SimError> {
        Ok(CameraIntrinsics::new(
            self.focal,
            self.focal,
            f64::from(self.width) / 2.0,
            f64::from(self.height) / 2.0,
            self.width,
            self.height,
            self.patch_size,
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub te_mm: f64,
    pub re_deg: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { te_mm: 5.0, re_deg: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub seed: u64,
    pub max_steps: usize,
    /// Control period, seconds.
    pub dt: f64,
    pub lambda: f64,
    pub switch_threshold_factor: f64,
    /// m/s
    pub max_linear: f64,
    /// rad/s
    pub max_angular: f64,
    /// Real camera.
    pub camera: CameraConfig,
    /// Desired mean depth d*, meters.
    pub scene_scale: f64,
    pub canonical: CanonicalMode,
    pub thresholds: Thresholds,
    /// Translation error above this multiple of the initial one counts as divergence.
    pub divergence_factor: f64,
    /// Observation-driven controllers fail once fewer scene points than this
    /// fraction are inside the current image.
    pub min_visible_fraction: f64,
    pub controller: ControllerKind,
    pub mode: ModeOverride,
    pub noise: NoiseModel,
    pub sampling: SamplingConfig,
    pub scene: SceneConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_steps: 600,
            dt: 0.05,
            lambda: 1.0,
            switch_threshold_factor: 0.1,
            max_linear: 0.5,
            max_angular: 1.0,
            camera: CameraConfig::default(),
            scene_scale: 1.0,
            canonical: CanonicalMode::Off,
            thresholds: Thresholds::default(),
            divergence_factor: 10.0,
            min_visible_fraction: 0.1,
            controller: ControllerKind::Hybrid,
            mode: ModeOverride::Auto,
            noise: NoiseModel::default(),
            sampling: SamplingConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn gains(&self) -> ControlGains {
        ControlGains {
            lambda: self.lambda,
            switch_threshold_factor: self.switch_threshold_factor,
            dt: self.dt,
        }
    }

    pub fn limits(&self) -> VelocityLimits {
        VelocityLimits {
            max_linear: self.max_linear,
            max_angular: self.max_angular,
        }
    }

    pub fn denorm_params(&self) -> Result<DenormParams, SimError> {
        Ok(DenormParams::new(CameraIntrinsics::canonical(), self.camera.intrinsics()?, self.scene_scale)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.max_steps == 0 {
            return Err(SimError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !(self.thresholds.te_mm > 0.0) || !(self.thresholds.re_deg > 0.0) {
            return Err(SimError::InvalidConfig("success thresholds must be positive".into()));
        }
        if !(self.max_linear > 0.0) || !(self.max_angular > 0.0) {
            return Err(SimError::InvalidConfig("velocity limits must be positive".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(SimError::InvalidConfig("divergence factor must exceed 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_visible_fraction) {
            return Err(SimError::InvalidConfig("min_visible_fraction must be in [0, 1]".into()));
        }
        self.gains().validate()?;
        self.denorm_params()?;
        self.noise.validate()?;
        self.sampling.validate()?;
        self.scene.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "detail")]
pub enum FailureReason {
    MaxSteps,
    Diverged,
    FeatureLoss,
    Controller(String),
    Simulator(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// World-from-camera pose at the start of the step.
    pub pose: Pose,
    /// Command applied during the step (zero on the last record).
    pub twist: Twist,
    pub te_mm: f64,
    pub re_deg: f64,
    pub mode: Option<ControlMode>,
    /// `(Xg_c, Xg_d)` in patch units, when the controller computed them.
    pub gravity: Option<(Vector2<f64>, Vector2<f64>)>,
    /// Whether the velocity limits changed the command.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub success: bool,
    pub te_mm: f64,
    pub re_deg: f64,
    /// Steps until success, or the number of steps executed.
    pub tt_steps: usize,
    pub diverged: bool,
    pub mode_switch_step: Option<usize>,
    pub failure: Option<FailureReason>,
    pub initial_te_mm: f64,
    pub initial_re_deg: f64,
    pub trajectory: Vec<StepRecord>,
}

impl EpisodeResult {
    fn setup_failure(reason: FailureReason) -> Self {
        Self {
            success: false,
            te_mm: f64::NAN,
            re_deg: f64::NAN,
            tt_steps: 0,
            diverged: false,
            mode_switch_step: None,
            failure: Some(reason),
            initial_te_mm: f64::NAN,
            initial_re_deg: f64::NAN,
            trajectory: Vec::new(),
        }
    }
}

fn errors(current: &Pose, desired: &Pose) -> (Pose, f64, f64) {
    let rel = relative_pose(current, desired);
    let te = rel.translation.norm() * 1e3;
    let re = rel.rotation_angle().to_degrees();
    (rel, te, re)
}

/// Runs the loop from `initial` toward `desired`. Per-step observation noise
/// is seeded from `noise_seed` and the step index.
pub fn run_episode(scene: &Scene, initial: &Pose, desired: &Pose, cfg: &EpisodeConfig, noise_seed: u64) -> EpisodeResult {
    let setup = || -> Result<(Controller, CameraIntrinsics), SimError> {
        cfg.validate()?;
        let intr = cfg.camera.intrinsics()?;
        let ctl = Controller::new(cfg.controller, cfg.mode, cfg.canonical, cfg.gains(), cfg.denorm_params()?)?;
        Ok((ctl, intr))
    };
    let (mut ctl, intr) = match setup() {
        Ok(v) => v,
        Err(e) => return EpisodeResult::setup_failure(FailureReason::Simulator(e.to_string())),
    };
    let limits = cfg.limits();
    let (_, te0, re0) = errors(initial, desired);
    let mut current = *initial;
    let mut trajectory = Vec::with_capacity(cfg.max_steps + 1);
    let mut mode_switch_step = None;
    let mut failure = None;
    let mut success = false;
    let mut diverged = false;
    let mut last_mode = None;
    let mut step = 0;
    loop {
        let (rel, te, re) = errors(&current, desired);
        let mut record = StepRecord {
            step,
            pose: current,
            twist: Twist::zero(),
            te_mm: te,
            re_deg: re,
            mode: None,
            gravity: None,
            clamped: false,
        };
        if te < cfg.thresholds.te_mm && re < cfg.thresholds.re_deg {
            success = true;
            trajectory.push(record);
            break;
        }
        if step >= cfg.max_steps {
            failure = Some(FailureReason::MaxSteps);
            trajectory.push(record);
            break;
        }
        if te0 > 0.0 && te > cfg.divergence_factor * te0 || !rel.is_finite() {
            diverged = true;
            failure = Some(FailureReason::Diverged);
            trajectory.push(record);
            break;
        }
        let obs = if ctl.kind().needs_observation() {
            if visible_fraction(scene, &current, &intr) < cfg.min_visible_fraction {
                failure = Some(FailureReason::FeatureLoss);
                trajectory.push(record);
                break;
            }
            match observe(scene, &current, desired, &intr, &cfg.noise, true, derive_seed(noise_seed, 0, step as u64)) {
                Ok(o) => Some(o),
                Err(SimError::NoVisiblePoints) => {
                    failure = Some(FailureReason::FeatureLoss);
                    trajectory.push(record);
                    break;
                }
                Err(e) => {
                    failure = Some(FailureReason::Simulator(e.to_string()));
                    trajectory.push(record);
                    break;
                }
            }
        } else {
            None
        };
        let cmd = match ctl.command(&rel, obs.as_ref()) {
            Ok(c) => c,
            Err(e) => {
                failure = Some(FailureReason::Controller(e.to_string()));
                trajectory.push(record);
                break;
            }
        };
        if cmd.mode == Some(ControlMode::Pbvs) && last_mode != Some(ControlMode::Pbvs) && mode_switch_step.is_none() {
            mode_switch_step = Some(step);
        }
        last_mode = cmd.mode;
        let twist = limits.clamp(&cmd.twist);
        record.twist = twist;
        record.mode = cmd.mode;
        record.gravity = cmd.gravity;
        record.clamped = twist != cmd.twist;
        trajectory.push(record);
        current = match integrate_twist(&current, &twist, cfg.dt) {
            Ok(p) => p,
            Err(e) => {
                failure = Some(FailureReason::Simulator(e.to_string()));
                break;
            }
        };
        step += 1;
    }
    let last = trajectory.last().expect("at least one record");
    EpisodeResult {
        success,
        te_mm: last.te_mm,
        re_deg: last.re_deg,
        tt_steps: last.step,
        diverged,
        mode_switch_step,
        failure,
        initial_te_mm: te0,
        initial_re_deg: re0,
        trajectory,
    }
}

/// Scene and pose pair of episode `index` under `cfg.seed`.
pub fn episode_setup(cfg: &EpisodeConfig, index: u64) -> Result<(Scene, Pose, Pose, EpisodeSeeds), SimError> {
    cfg.validate()?;
    let seeds = EpisodeSeeds::new(cfg.seed, index);
    let scene = generate_scene(&cfg.scene, cfg.scene_scale, seeds.scene)?;
    let (initial, desired) = sample_pose_pair(&scene, &cfg.camera.intrinsics()?, &cfg.sampling, seeds.pose)?;
    Ok((scene, initial, desired, seeds))
}

/// Episode `index` of the batch defined by `cfg`; setup errors become failed records.
pub fn run_indexed_episode(cfg: &EpisodeConfig, index: u64) -> EpisodeResult {
    match episode_setup(cfg, index) {
        Ok((scene, initial, desired, seeds)) => run_episode(&scene, &initial, &desired, cfg, seeds.noise),
        Err(e) => EpisodeResult::setup_failure(FailureReason::Simulator(e.to_string())),
    }
}
