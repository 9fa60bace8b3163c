//! Named random sub-streams derived from a single 64-bit seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Resample = 2,
    Synthetic = 3,
    Mixture = 4,
}

/// Independent generator for `(seed, stream, index)`. The index separates
/// repetitions of the same stream, e.g. one per resampled basket.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 40) ^ index);
    rng
}

/// Derive a child seed, used when a sub-task takes a plain `u64` seed.
pub fn child_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, stream, index).next_u64()
}
