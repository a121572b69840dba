//! Counter-based random streams.
//!
//! Every independent unit of Monte-Carlo work (a Chernoff draw, a subsample,
//! a replicate) gets its own generator derived from `(seed, domain, index)`,
//! so results do not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains; keep distinct so that e.g. replicate 3 and subsample 3 of
/// the same seed never share a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Chernoff = 1,
    Subsample = 2,
    Replicate = 3,
    Gumbel = 4,
    Split = 5,
    Dgp = 6,
}

/// Generator for work unit `index` in `domain` under master `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. the data seed of replicate `index`.
pub fn child_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    mix(mix(seed.wrapping_add(domain as u64)) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

// splitmix64 finaliser
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
