//! Reproducible random substreams.
//!
//! Each stream is a ChaCha8 generator keyed by `(seed, replicate,
//! individual, purpose)`, so what any individual draws never depends on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    ActivityCentre = 1,
    Detection = 2,
    Movement = 3,
}

pub fn substream(seed: u64, replicate: u64, individual: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, replicate, individual, purpose as u64]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
