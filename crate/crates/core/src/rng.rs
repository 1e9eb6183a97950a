//! Seeded random streams.
//!
//! One user-facing seed drives several independent components. Each
//! component draws from its own ChaCha stream, so changing how many numbers
//! one component consumes never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream tags derived from a single seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Topology = 1,
    Trajectory = 2,
    Observations = 3,
    SensorPick = 4,
    Calibration = 5,
    Instance = 6,
}

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, tag: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag as u64);
    rng
}
