//! Seeded random streams.
//!
//! Every experiment takes an explicit `u64` seed. Streams are SplitMix64, so
//! the same seed yields the same bits on every platform.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
pub use rand_xoshiro::SplitMix64;

pub fn stream(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Derives an independent seed for a named sub-stream (e.g. one per source
/// model), so adding a consumer does not shift the numbers of the others.
pub fn derive(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal_vec(rng: &mut SplitMix64, len: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; len];
    }
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    (0..len).map(|_| dist.sample(rng)).collect()
}
