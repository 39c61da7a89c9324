//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by a top-level seed plus a path
//! of indices (replicate, pair, model, tree). Streams never depend on
//! execution order, so serial and parallel runs agree bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `base`, one component at a time.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN))))
}

pub fn rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, path))
}

/// Stream tags, so that distinct consumers never share a derived seed.
pub(crate) mod tag {
    pub const EXPERIMENT: u64 = 1;
    pub const ASSIGNMENT: u64 = 2;
    pub const OUTCOME_MODEL: u64 = 3;
    pub const DIFF_MODEL_A: u64 = 4;
    pub const DIFF_MODEL_B: u64 = 5;
    pub const TREE: u64 = 6;
}
