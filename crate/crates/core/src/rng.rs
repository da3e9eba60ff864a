//! Seeded random streams.
//!
//! Every stochastic step (sampling noise, shuffling, dropout masks, weight
//! init) draws from its own ChaCha8 stream. Sub-streams are derived from a
//! base seed and a tag with a SplitMix64 finaliser so that two consumers of
//! the same base seed never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with any number of tags into a new seed.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// A stream for `seed` alone.
pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A stream for `seed` under the given tags.
pub fn substream(seed: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}
