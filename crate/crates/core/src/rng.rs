//! Counter-based random streams.
//!
//! Every random array is a pure function of `(seed, stream)`: ChaCha8 keyed by
//! the seed with the replicate index as its stream id. Replicates can be drawn
//! in any order and on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids at or above this offset are reserved for auxiliary draws
/// (independent alternative arms, field sampling) so they never collide with
/// replicate streams.
pub const AUX_STREAM_BASE: u64 = 1 << 62;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a parent seed and a label, for sub-experiments.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
