//! Deterministic random streams.
//!
//! Every random draw in training and evaluation comes from a generator keyed by
//! `(seed, purpose, outer index, inner index)`, so results do not depend on
//! which thread handles which task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Train = 1,
    Eval = 2,
    Curves = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: Purpose, outer: u64, inner: u64) -> u64 {
    let mut h = splitmix64(seed);
    for part in [purpose as u64, outer, inner] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, outer: u64, inner: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, outer, inner))
}
