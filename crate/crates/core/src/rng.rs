//! Counter-based random streams.
//!
//! A stream is addressed by `(seed, purpose, trajectory, step)`. The seed and
//! purpose fill the ChaCha key, the trajectory selects the ChaCha stream and
//! the step selects a `2^32`-word block of that stream. Any draw is therefore
//! a pure function of its address, independent of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    InitialState = 1,
    Noise = 2,
    MonteCarlo = 3,
    Sampling = 4,
    Auxiliary = 5,
}

pub fn stream(seed: u64, purpose: Purpose, trajectory: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trajectory);
    rng.set_word_pos((step as u128) << 32);
    rng
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}
