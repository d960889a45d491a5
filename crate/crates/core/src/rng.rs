//! Seeded random streams.
//!
//! Every stochastic routine takes a master seed and derives independent
//! streams from `(seed, index)` pairs, so results never depend on how
//! work is scheduled across threads.
//!
//! Split rule: stream `i` of master seed `s` is `ChaCha8Rng::seed_from_u64(s)`
//! with its ChaCha stream id set to `i`. Child seeds (for nested
//! derivations) are the first `u64` drawn from that stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent generator for `(seed, index)`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Child master seed for `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    stream(seed, index).next_u64()
}
