//! Seed derivation. Every unit of work gets its own seed so parallel and
//! serial runs produce the same output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer, a bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `(major, minor)` job under `master`.
///
/// Injective in `(major, minor)` for indices below 2^32, since the packing
/// and both mixing rounds are bijections.
pub fn derive(master: u64, major: u64, minor: u64) -> u64 {
    debug_assert!(major < 1 << 32 && minor < 1 << 32);
    mix64(mix64(master) ^ mix64((major << 32) | minor))
}

/// Seed for a named stage so stages never share random streams.
pub fn stage(master: u64, name: &str) -> u64 {
    name.bytes().fold(mix64(master), |acc, b| mix64(acc ^ b as u64))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn derive_is_collision_free_at_batch_scale() {
        // 160 scenes × 50 graphs, exhaustively
        let mut seen = HashSet::new();
        for s in 0..160 {
            for k in 0..50 {
                assert!(seen.insert(derive(42, s, k)));
            }
        }
    }

    #[test]
    fn stage_names_differ() {
        assert_ne!(stage(1, "render"), stage(1, "qa"));
        assert_ne!(stage(1, "qa"), stage(2, "qa"));
    }
}
