//! Stable seed derivation.
//!
//! Every random stream in the crate is keyed by a tuple of integers mixed
//! through SplitMix64, so per-item streams never depend on iteration order or
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into one 64-bit seed.
pub fn derive(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6C61_776E_6D65_7472, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// FNV-1a over a string, used to key streams by identifiers.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parts))
}
