//! Named random substreams derived from one master seed.
//!
//! Every consumer draws from a ChaCha8 generator keyed by the master seed and
//! a stream id `(kind << 32) | index`, so adding draws in one consumer never
//! shifts another consumer's sequence, and any single episode can be
//! regenerated on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    ReservoirBuild = 1,
    EnvSpawn = 2,
    ActionSampling = 3,
}

pub fn substream(kind: Substream, index: u64) -> u64 {
    ((kind as u64) << 32) | (index & 0xffff_ffff)
}

/// Generator for `kind` in episode (or item) `index` of the run seeded `seed`.
pub fn stream_rng(seed: u64, kind: Substream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(substream(kind, index));
    rng
}
