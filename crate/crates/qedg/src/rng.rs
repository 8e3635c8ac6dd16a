//! Deterministic seed-stream derivation.
//!
//! Every randomized stage (dataset sampling, weight init, shuffling, noise
//! injection, attack loops) owns a named stream derived from the single
//! master seed, so reordering or skipping one stage never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream offsets; each maps a master seed to an independent RNG.
pub mod stream {
    pub const DATASET: u64 = 1;
    pub const TARGET_INIT: u64 = 2;
    pub const TARGET_TRAIN: u64 = 3;
    pub const GENERATOR_INIT: u64 = 4;
    pub const SUBSTITUTE_INIT: u64 = 5;
    pub const ATTACK: u64 = 6;
    pub const ORACLE_NOISE: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const ADVERSARIAL: u64 = 9;
    pub const THEORY: u64 = 10;
    pub const AUGMENT: u64 = 11;
}

/// SplitMix64 step; the standard finalizer used to expand one seed into a
/// sequence of well-mixed 64-bit values.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives the 64-bit seed for `(master, stream)`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master.wrapping_add(stream.wrapping_mul(0xA0761D6478BD642F)))
}

/// Deterministic RNG for one named stream of a master seed.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}
