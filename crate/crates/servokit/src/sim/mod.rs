//! Synthetic servo environment: scenes, observations, controllers, episodes.

pub mod controller;
pub mod episode;
pub mod observe;
pub mod scene;

pub use controller::{CanonicalMode, Command, Controller, ControllerKind, ModeOverride};
pub use episode::{
    episode_setup, run_episode, run_indexed_episode, CameraConfig, EpisodeConfig, EpisodeResult, FailureReason,
    StepRecord, Thresholds,
};
pub use observe::{observe, ExtraMode, NoiseModel, Observation, ScoreRow, SparseScores};
pub use scene::{generate_scene, sample_pose_pair, visible_fraction, SamplingConfig, Scene, SceneConfig};
