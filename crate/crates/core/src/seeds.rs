//! Deterministic RNG substreams.
//!
//! All randomness in the crate flows from a single `u64` seed through named
//! substreams, so that e.g. data generation, weight init, sign vectors and
//! batch shuffling can be varied independently while staying reproducible
//! across runs and thread counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed, a stream label and an index into a 64-bit stream seed.
pub fn stream_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = splitmix(seed);
    for &b in label.as_bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    splitmix(h ^ index)
}

/// A seeded RNG for the named substream.
pub fn stream_rng(seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(stream_seed(seed, label, index))
}
