//! Seeded random streams.
//!
//! Every stochastic component takes an explicit [`SimRng`]. Child streams are
//! derived with [`child_seed`], a pure function of `(parent, index)`, so trial
//! `i` gets the same stream no matter when or where it runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `mix64(mix64(parent) ^ mix64(index + golden))`.
pub fn child_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent) ^ mix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Named sub-streams so unrelated consumers of one master seed never collide.
pub mod stream {
    pub const TRIALS: u64 = 0x7472_6961_6c73;
    pub const SAMPLES: u64 = 0x7361_6d70_6c65;
    pub const SIMILARITY: u64 = 0x7369_6d69_6c61;
}

pub fn child_rng(parent: u64, index: u64) -> SimRng {
    rng_from_seed(child_seed(parent, index))
}
