//! Deterministic random streams.
//!
//! Every stochastic routine derives one independent ChaCha stream per path
//! from (master seed, path index). Results are therefore reproducible for a
//! fixed seed and independent of how paths are distributed over workers.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream for one path: same master seed, per-path stream id.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}
