//! Seeded random number streams.
//!
//! A single run seed is split into independently addressed ChaCha streams so
//! that consuming randomness in one component never perturbs the draw
//! sequence of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STREAM_PARENT: u64 = 1;
const STREAM_CHILD: u64 = 2;
const STREAM_ENV: u64 = 3;
const STREAM_INIT: u64 = 4;

/// Named RNG streams for one training run.
pub struct RngStreams {
    pub parent: ChaCha8Rng,
    pub child: ChaCha8Rng,
    pub env: ChaCha8Rng,
    /// Network weight initialization.
    pub init: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            parent: stream(seed, STREAM_PARENT),
            child: stream(seed, STREAM_CHILD),
            env: stream(seed, STREAM_ENV),
            init: stream(seed, STREAM_INIT),
        }
    }
}

/// One ChaCha stream addressed by (seed, stream id).
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
