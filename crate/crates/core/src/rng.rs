//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator seeded by a
//! hash of `(seed, keys...)`. Draws therefore depend only on their key, never
//! on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a key path.
pub fn substream(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, k| splitmix64(acc ^ splitmix64(*k)))
}

/// Named substream, for top-level consumers (training, evaluation, ...).
pub fn named_substream(seed: u64, name: &str) -> u64 {
    let key = name
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
    substream(seed, &[key])
}

pub fn stream_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(seed, keys))
}
