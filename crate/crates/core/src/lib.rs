//! Geometry and control primitives for correspondence-driven visual servoing.
//!
//! The crate is `no_std` (it needs `alloc`) and has no IO. It covers:
//!
//! - [`geometry`]: rigid poses, pinhole projection, axis-angle and twist integration.
//! - [`epipolar`]: normalized 8-point essential estimation, decomposition and
//!   positive-depth pose selection.
//! - [`matching`]: score matrices, explicit reductions, dual-softmax confidence,
//!   gravity centers and the particle-to-grid matching tensor.
//! - [`control`]: PBVS and its inverse, hybrid 2.5D control, velocity
//!   denormalization and the velocity parameterization losses.
#![no_std]

extern crate alloc;

pub mod control;
pub mod epipolar;
pub mod geometry;
pub mod matching;

pub use control::{
    ControlError, ControlGains, ControlMode, DenormParams, HybridError, ModeLatch, VelocityLimits,
    VelocityParam,
};
pub use epipolar::{EpipolarError, EssentialMatrix, MatchSet, PoseCandidates};
pub use geometry::{AxisAngle, CameraIntrinsics, GeometryError, Pose, Twist};
pub use matching::{
    ConfidenceMap, GridDims, MatchingError, PatchFeatureMap, ProbMatchTensor, ScoreMatrix,
};
