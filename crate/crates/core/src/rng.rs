//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream identified by a
//! 64-bit seed and a stream index, so episode `k` of a run produces the same
//! numbers no matter which worker thread executes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
