//! Seeded random streams, one per purpose, derived from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent consumers of randomness. Each gets its own ChaCha stream so
/// that changing how much one consumer draws never shifts the others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Pairs = 2,
    Reparam = 3,
    Render = 4,
    Split = 5,
    Unfair = 6,
    Classifier = 7,
    Eval = 8,
}

pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
