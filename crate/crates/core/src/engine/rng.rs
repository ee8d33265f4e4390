//! Per-trajectory random streams.
//!
//! Trajectory `i` of an ensemble with master seed `m` is driven by a
//! ChaCha8 stream seeded with `split_seed(m, i)`, where
//!
//! ```text
//! split_seed(m, i) = mix64(mix64(m) + (i + 1) * 0x9E37_79B9_7F4A_7C15)
//! ```
//!
//! and `mix64` is the SplitMix64 output finalizer. Streams therefore depend
//! only on `(m, i)`, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrajectoryRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn split_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master).wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn trajectory_rng(seed: u64) -> TrajectoryRng {
    ChaCha8Rng::seed_from_u64(seed)
}
