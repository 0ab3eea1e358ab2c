//! Seed derivation.
//!
//! Every random decision in a run draws from a ChaCha8 stream seeded by
//! [`derive`], so a run is fully determined by its master seed. The
//! derivation is `splitmix64(master ^ splitmix64((task << 8) | purpose))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. The discriminant is part of the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Sampling a task's selected neurons.
    Selection = 1,
    /// Sampling connection positions and initial values.
    Allocation = 2,
    /// Minibatch shuffling.
    Shuffle = 3,
    /// Synthetic data generation.
    Data = 4,
    /// Sample choice for analysis exports.
    Export = 5,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, task: usize, purpose: Purpose) -> u64 {
    splitmix64(master ^ splitmix64(((task as u64) << 8) | purpose as u64))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn task_rng(master: u64, task: usize, purpose: Purpose) -> ChaCha8Rng {
    rng(derive(master, task, purpose))
}
