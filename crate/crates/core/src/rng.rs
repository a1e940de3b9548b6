//! Seed derivation. All randomness flows from xoshiro256** generators whose
//! state is expanded from a 64-bit seed by SplitMix64, so results do not
//! depend on platform or thread scheduling.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

/// SplitMix64 output function.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic child seed for stream `index` of `seed`.
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for sub-stream `index` of `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, index))
}

/// Named sub-streams so that different consumers of one user seed never
/// share draws.
pub mod domain {
    pub const DATA: u64 = 0xD47A;
    pub const NOISE: u64 = 0x0015E;
    pub const BATCHES: u64 = 0xBA7C;
    pub const VERIFY: u64 = 0x5E1F;
}
