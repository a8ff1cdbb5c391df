//! Counter-based seed derivation.
//!
//! Every episode seed is a pure function of `(master, stream, index)`, so the
//! same episode index draws the same scene and poses in every ablation cell.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STREAM_SCENE: u64 = 1;
pub const STREAM_POSE: u64 = 2;
pub const STREAM_NOISE: u64 = 3;

/// The `index`-th word of ChaCha stream `stream` keyed by `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

/// Seeds for one episode of a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeSeeds {
    pub scene: u64,
    pub pose: u64,
    pub noise: u64,
}

impl EpisodeSeeds {
    pub fn new(master: u64, index: u64) -> Self {
        Self {
            scene: derive_seed(master, STREAM_SCENE, index),
            pose: derive_seed(master, STREAM_POSE, index),
            noise: derive_seed(master, STREAM_NOISE, index),
        }
    }
}
