//! Seeded random streams.
//!
//! Every randomized step draws from a ChaCha8 generator keyed by the run seed
//! and a fixed stream number, so changing how often one stream is consumed
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream numbers used by the library.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const DATA_ORDER: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const EXPORT: u64 = 6;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
