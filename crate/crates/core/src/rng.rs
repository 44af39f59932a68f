//! Seeded generators with fixed stream assignments, so channel draws never
//! depend on how much randomness a solver or estimator consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const STREAM_CHANNELS: u64 = 0;
pub const STREAM_SOLVER: u64 = 1;
pub const STREAM_ESTIMATION: u64 = 2;

/// ChaCha20 keyed by `seed` (via `seed_from_u64`) on the given stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
