//! Seeded generator streams.
//!
//! Every run derives its generators from a single `u64` seed. Separate
//! streams keep the draws of one consumer (say, the I-SGD reuse decision)
//! from shifting the draws of another (the base samples).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Named stream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Samples = 1,
    Schedule = 2,
    ReuseDecision = 3,
    Evaluation = 4,
    Data = 5,
}

pub fn stream(seed: u64, which: Stream) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `which` of replicate `r`, disjoint from the run streams above.
pub fn replicate(seed: u64, which: Stream, r: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 32) | (r & 0xffff_ffff) | (1 << 63));
    rng
}
