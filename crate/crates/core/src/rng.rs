//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic stage draws from a `ChaCha8Rng` seeded by mixing the
//! global seed with a list of stream tags (epoch, sample index, ...), so a
//! stream never depends on how many numbers another stream consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with `tags` into a new 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// A generator for the stream identified by `(seed, tags)`.
pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream tags used across the crate. Distinct constants keep streams apart.
pub mod tags {
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const AUGMENT: u64 = 0x4155_474D;
    pub const INIT: u64 = 0x494E_4954;
    pub const VIEWBANK: u64 = 0x5642_4E4B;
    pub const CORRUPT: u64 = 0x434F_5252;
    pub const SYNTH: u64 = 0x5359_4E54;
    pub const PROBE: u64 = 0x5052_4F42;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
