//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream keyed by
//! `(seed, purpose, index)`, so adding a component to one strategy never
//! shifts the draws seen by another, and a run can resume at any task
//! boundary without carrying generator state.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    Split = 1,
    EncoderInit = 2,
    HeadInit = 3,
    DecoderInit = 4,
    FlowInit = 5,
    Classifier = 6,
    Autoencoder = 7,
    Flow = 8,
    Memory = 9,
    Regularizer = 10,
    Evaluation = 11,
    Data = 12,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) ^ index);
    rng
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
