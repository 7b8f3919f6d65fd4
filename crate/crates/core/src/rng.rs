//! Deterministic random streams.
//!
//! Every consumer of randomness derives its own generator from a base seed and
//! a small tuple of coordinates (layer, token, ...). Results therefore never
//! depend on iteration order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with an arbitrary number of coordinates into one 64-bit key.
pub fn derive_key(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Generator for the stream identified by `(seed, coords...)`.
pub fn stream(seed: u64, coords: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_key(seed, coords))
}
