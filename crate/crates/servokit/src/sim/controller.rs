//! Closed-loop controllers and the canonical-camera wrapper.

use serde::{Deserialize, Serialize};
use servokit_core::control::{
    canonicalize_pose, denormalize_velocity, hybrid_control, pbvs, select_mode_with,
};
use servokit_core::epipolar::{recover_pose, triangulate};
use servokit_core::{CameraIntrinsics, ControlGains, ControlMode, DenormParams, ModeLatch, Pose, Twist};

use super::observe::Observation;
use crate::error::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    /// PBVS on the ground-truth relative pose.
    OraclePbvs,
    /// PBVS on the pose recovered from the explicit (expected) matches.
    EpipolarPbvs,
    /// Hybrid 2.5D control from gravity centers, latching to PBVS when close.
    Hybrid,
}

impl ControllerKind {
    pub fn needs_observation(self) -> bool {
        !matches!(self, ControllerKind::OraclePbvs)
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle-pbvs" => Ok(Self::OraclePbvs),
            "epipolar-pbvs" => Ok(Self::EpipolarPbvs),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err(format!("unknown controller `{s}`")),
        }
    }
}

/// Mode policy of the hybrid controller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeOverride {
    /// Threshold switch with the one-way PBVS latch.
    #[default]
    Auto,
    Hybrid,
    Pbvs,
}

/// How the controller relates to the real camera.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CanonicalMode {
    /// Operates directly on the real camera and scale.
    #[default]
    Off,
    /// Operates on the canonical reading; output is denormalized.
    Aware,
    /// Operates on the canonical reading; output is applied as is.
    Unaware,
}

pub struct Controller {
    kind: ControllerKind,
    mode: ModeOverride,
    canonical: CanonicalMode,
    gains: ControlGains,
    params: DenormParams,
    latch: ModeLatch,
}

/// One control decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Command {
    pub twist: Twist,
    pub mode: Option<ControlMode>,
    pub gravity: Option<(nalgebra::Vector2<f64>, nalgebra::Vector2<f64>)>,
}

impl Controller {
    pub fn new(
        kind: ControllerKind,
        mode: ModeOverride,
        canonical: CanonicalMode,
        gains: ControlGains,
        params: DenormParams,
    ) -> Result<Self, SimError> {
        gains.validate()?;
        Ok(Self {
            kind,
            mode,
            canonical,
            gains,
            params,
            latch: ModeLatch::new(),
        })
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    fn canonical_active(&self) -> bool {
        self.canonical != CanonicalMode::Off && !self.params.is_identity()
    }

    /// Intrinsics and scene scale the inner controller believes in.
    fn belief(&self) -> (CameraIntrinsics, f64) {
        if self.canonical_active() {
            (self.params.canonical, 1.0)
        } else {
            (self.params.real, self.params.scene_scale)
        }
    }

    /// `truth` is the desired-from-current pose from the oracle channel.
    pub fn command(&mut self, truth: &Pose, obs: Option<&Observation>) -> Result<Command, SimError> {
        let lambda = self.gains.lambda;
        let (intr, depth) = self.belief();
        let pose = if self.canonical_active() {
            canonicalize_pose(truth, &self.params)?
        } else {
            *truth
        };
        let need = || obs.ok_or_else(|| SimError::InvalidConfig("controller needs an observation".into()));
        let mut out = match self.kind {
            ControllerKind::OraclePbvs => Command {
                twist: pbvs(&pose, lambda),
                mode: None,
                gravity: None,
            },
            ControllerKind::EpipolarPbvs => Command {
                twist: pbvs(&epipolar_pose(need()?, &intr, depth)?, lambda),
                mode: None,
                gravity: None,
            },
            ControllerKind::Hybrid => {
                let obs = need()?;
                let (xg_c, xg_d) = obs.gravity_centers()?;
                let proposed = select_mode_with(&xg_c, &xg_d, obs.grid().len(), self.gains.switch_threshold_factor);
                let mode = match self.mode {
                    ModeOverride::Auto => self.latch.update(proposed),
                    ModeOverride::Hybrid => ControlMode::Hybrid,
                    ModeOverride::Pbvs => ControlMode::Pbvs,
                };
                let twist = match mode {
                    ControlMode::Pbvs => pbvs(&pose, lambda),
                    ControlMode::Hybrid => hybrid_control(&pose, &xg_c, &xg_d, depth, lambda, &intr)?,
                };
                Command {
                    twist,
                    mode: Some(mode),
                    gravity: Some((xg_c, xg_d)),
                }
            }
        };
        if self.canonical_active() && self.canonical == CanonicalMode::Aware {
            out.twist = denormalize_velocity(&out.twist, &self.params, lambda)?;
        }
        Ok(out)
    }
}

/// Relative pose from the explicit matches, with the translation scaled so the
/// mean triangulated desired-view depth equals `depth`.
pub fn epipolar_pose(obs: &Observation, intr: &CameraIntrinsics, depth: f64) -> Result<Pose, SimError> {
    let matches = obs.explicit_matches(intr)?;
    let (pose, _) = recover_pose(&matches)?;
    let depths: Vec<f64> = matches
        .pairs()
        .iter()
        .filter_map(|(xc, xd)| triangulate(xc, xd, &pose).ok())
        .filter(|&(zc, zd)| zc > 0.0 && zd > 0.0)
        .map(|(_, zd)| zd)
        .collect();
    if depths.is_empty() {
        return Err(SimError::Epipolar(servokit_core::EpipolarError::NoValidCandidate(0.0)));
    }
    let mean = depths.iter().sum::<f64>() / depths.len() as f64;
    Ok(Pose::new(pose.rotation, pose.translation * (depth / mean)))
}
