//! Keyed random streams.
//!
//! Every stochastic step draws from its own ChaCha stream whose seed is a
//! hash of `(seed, key parts…)`, so results do not depend on the order in
//! which repetitions are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SpiRng = ChaCha8Rng;

/// What a stream is used for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Covariates = 1,
    Outcome = 2,
    Surrogates = 3,
    Sampling = 4,
    CrossValidation = 5,
    SingleSurrogate = 6,
    Multiwave = 7,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed and an ordered list of key parts into one 64-bit value.
pub fn stream_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, parts: &[u64]) -> SpiRng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, parts))
}
