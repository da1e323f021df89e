//! Seeded, counter-addressed random streams.
//!
//! Every seeded operation derives its generator from `(seed, stream)` so the
//! same draw sequence is reproduced regardless of how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers for the independent uses of one seed.
pub mod streams {
    pub const CAP: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INTER_PAIRS: u64 = 3;
    pub const FEATURE_MAP: u64 = 4;
    pub const GALLERY: u64 = 5;
    pub const PROTOCOL: u64 = 6;
    pub const INIT: u64 = 7;
    pub const BATCHES: u64 = 8;
    pub const DROPOUT: u64 = 9;
    pub const MINING: u64 = 10;
    pub const PAIRING: u64 = 11;
    pub const STATS: u64 = 12;
    /// Per-entity streams (one per patient) start here.
    pub const PER_ENTITY_BASE: u64 = 1 << 32;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
