//! Seeded random streams.
//!
//! Every stochastic stage draws from its own ChaCha stream derived from the
//! scenario seed, so stages can be re-run or reordered without perturbing one
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream identifiers for the pipeline stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    QubitSource = 1,
    Downlink = 2,
    Uplink = 3,
    Adversary = 4,
    Predictor = 5,
    Tamper = 6,
    Background = 7,
    Measurement = 8,
    KeyMaterial = 9,
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
