//! Independent seeded random streams.
//!
//! Each consumer draws from its own ChaCha stream keyed by the run seed, a
//! purpose tag and up to two indices (epoch, sample, batch...). Reordering or
//! parallelising one consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Shuffle = 1,
    Augment = 2,
    Dropout = 3,
    Split = 4,
    Synthetic = 5,
    Test = 6,
}

pub fn stream_rng(seed: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_mut(8).zip([seed, stream as u64, a, b]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
