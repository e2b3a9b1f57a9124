//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from one
//! seed, so changing how often one consumer draws never perturbs another.

use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

/// Named stream ids. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Dynamics = 1,
    RewardNoise = 2,
    Exploration = 3,
    Sampling = 4,
    FastBuffer = 5,
    SlowBuffer = 6,
    Init = 7,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Draws an index from a discrete distribution given by `probs`.
///
/// Falls back to the last index with positive mass when rounding leaves the
/// uniform draw above the cumulative total.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}
