//! Seed derivation for the independent random streams of one run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a stage tag and an index into a fresh 64-bit seed
/// (SplitMix64 finalizer).
pub fn derive(base: u64, stage: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stage tags used with [`derive`].
pub mod stage {
    pub const TRIPLETS: u64 = 1;
    pub const CSE: u64 = 2;
    pub const GAT: u64 = 3;
    pub const PROBE: u64 = 4;
}
