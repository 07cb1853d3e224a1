//! Random streams.
//!
//! Every random draw comes from ChaCha8 seeded with `seed_from_u64(seed)`
//! and a stream number chosen by purpose, so one seed drives independent,
//! reproducible sequences for data, initialization, residuals and resamples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DATA_STREAM: u64 = 0;
pub const INIT_STREAM: u64 = 1;
pub const RESIDUAL_STREAM_BASE: u64 = 1 << 32;
pub const BOOTSTRAP_STREAM_BASE: u64 = 2 << 32;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
