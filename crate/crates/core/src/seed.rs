//! Seed derivation. Every random stream in the pipeline is keyed by the
//! user seed plus a path of stream tags, so results never depend on which
//! worker ran a task or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`, one splitmix round per tag.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags used across the crate.
pub mod tags {
    pub const SPLITS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const EPOCH: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const ENSEMBLE: u64 = 6;
    pub const TUNE: u64 = 7;
    pub const CV: u64 = 8;
}
