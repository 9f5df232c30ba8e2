//! Splittable seed derivation.
//!
//! Every random stream in a run is keyed by a path of integers, e.g.
//! `(master_seed, grid_hash, trial, config_id, round)`. The path is folded
//! through the SplitMix64 finalizer, so streams are portable across
//! platforms and languages and independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels, mixed into derivation paths to keep unrelated streams apart.
pub mod tag {
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const TRAIN: u64 = 0x5452_4e00;
    pub const EVAL: u64 = 0x4556_414c;
    pub const PRIVACY: u64 = 0x5052_4956;
    pub const POOL: u64 = 0x504f_4f4c;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const DATA: u64 = 0x4441_5441;
    pub const REPARTITION: u64 = 0x5245_5041;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a path of keys.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derive_rng(base: u64, path: &[u64]) -> Rng {
    rng(derive(base, path))
}

/// Stable 64-bit FNV-1a hash, used to content-address grid points.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
