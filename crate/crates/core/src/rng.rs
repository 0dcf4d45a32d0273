//! Counter-based random number streams.
//!
//! Every consumer draws from a ChaCha stream keyed by `(seed, purpose,
//! index)`, so path-level work can be scheduled on any number of threads and
//! still reproduce bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Brownian increments and chain transitions of one simulated path.
    PathNoise = 1,
    /// Unit-exponential death clock of one path.
    DeathClock = 2,
    /// Particle-filter transitions and resampling.
    Particle = 3,
    /// Inner paths of the nested Monte Carlo bond price.
    NestedMc = 4,
    /// Scenario-level draws (randomized test suites).
    Scenario = 5,
}

pub fn stream_rng(seed: u64, kind: StreamKind, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 40) ^ index);
    rng
}
