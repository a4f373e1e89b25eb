//! Seeded generators.
//!
//! Every stochastic routine takes an explicit `&mut SimRng`; nothing reads
//! global entropy. ChaCha8 is counter based, so independent streams for
//! seeds, folds and workers are derived with [`stream`] instead of reseeding
//! from a parent generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for `(seed, stream)`; distinct streams never overlap.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
