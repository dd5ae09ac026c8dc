//! Deterministic RNG streams. Every random draw in the crate goes through a
//! `ChaCha8Rng` keyed by a user seed and a stream index, so results never
//! depend on thread scheduling or call order across independent consumers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a (major, minor) pair into one stream index.
pub fn stream2(major: u64, minor: u64) -> u64 {
    (major << 20) ^ minor
}
