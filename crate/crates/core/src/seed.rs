//! Seeded generators and per-sample seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator every stochastic routine takes.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for `index` from a run seed (SplitMix64 finaliser).
///
/// Workers can compute any sample's seed without coordinating.
pub fn mix_seed(run_seed: u64, index: u64) -> u64 {
    let mut z = run_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
