//! Seeded random state.
//!
//! Every random draw in this crate comes from ChaCha20 (`rand_chacha` 0.9,
//! `ChaCha20Rng::seed_from_u64`). ChaCha is a counter-based stream cipher, so
//! an independent substream is obtained by keeping the seed and selecting a
//! different 64-bit stream id. Replication `r` of an experiment with base seed
//! `s` uses seed `s + r`; the purposes within one replication (data, split,
//! model, metrics) use fixed stream ids below.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type SeededRng = ChaCha20Rng;

/// Stream ids for the independent purposes inside one replication.
pub mod stream {
    pub const DATA: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const MODEL: u64 = 2;
    pub const METRICS: u64 = 3;
    pub const TEST_DATA: u64 = 4;
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn seeded_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of replication `index` under `base`.
pub fn replication_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}
