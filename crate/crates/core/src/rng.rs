//! Seeded random streams.
//!
//! Every random draw in the engine comes from a ChaCha8 stream keyed by a
//! user seed plus a purpose-specific stream id, so that runs are reproducible
//! across platforms and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids. Distinct purposes never share a stream.
pub mod stream {
    pub const INIT_GENERATOR: u64 = 1;
    pub const INIT_DISCRIMINATOR: u64 = 2;
    pub const SHUFFLE_LABELED: u64 = 3;
    pub const SHUFFLE_UNLABELED: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const SYNTH_DOCS: u64 = 6;
    pub const SYNTH_EMBED: u64 = 7;
    pub const SYNTH_NOISE: u64 = 8;
    pub const SAMPLE: u64 = 9;
    pub const SYNTH_PLANT: u64 = 10;
}

/// A stream keyed by `(seed, purpose, index)`, e.g. index = epoch.
pub fn keyed(seed: u64, purpose: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    rng
}
