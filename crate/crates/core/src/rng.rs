//! Deterministic random streams.
//!
//! Every stochastic routine draws from a ChaCha8 stream keyed by a master
//! seed and selected by a stream id, so results never depend on scheduling
//! or on how many threads run concurrently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used across the crate. Layer streams of a chain use
/// `LAYER_BASE + layer`.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const LAYER_BASE: u64 = 16;
    pub const MONTE_CARLO: u64 = 1 << 20;
    pub const SPECTRUM: u64 = 2 << 20;
    pub const NODES: u64 = 3 << 20;
}

/// SplitMix64 finalizer, used to spread user seeds over the key space.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    mix64(mix64(seed) ^ label.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// A ChaCha8 generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    rng.set_stream(stream);
    rng
}
