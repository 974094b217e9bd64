//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from one base
//! seed mixed with a task tag and an index through SplitMix64, so streams
//! for different tasks or cells never overlap and do not depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Task tags for [`derive_seed`].
pub mod tag {
    pub const DITHER: u64 = 1;
    pub const ENSEMBLE_MEMBER: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const BASELINE: u64 = 4;
    pub const SYNTH_CELL: u64 = 5;
    pub const SYNTH_TRUTH: u64 = 6;
    pub const SYNTH_GLOBAL: u64 = 7;
    pub const NET_INIT: u64 = 8;
    pub const TRAIN_SPLIT: u64 = 9;
    pub const TRAIN_SHUFFLE: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn rng_for(base: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, index))
}
