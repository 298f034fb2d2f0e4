//! Seeded randomness.
//!
//! Every random stream in the crate is a ChaCha8 generator (a counter-based
//! stream cipher) keyed from a `u64` seed through [`derive_seed`], so that
//! orderings, initial weights and minibatch shuffles are reproducible from
//! the seeds recorded in a config or checkpoint, independently of platform.

use rand::{seq::SliceRandom, SeedableRng};
pub use rand_chacha::ChaCha8Rng as Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream label (SplitMix64 finalizer), giving
/// independent sub-streams such as "task 3 training" or "ordering".
pub fn derive_seed(base: u64, label: u64) -> u64 {
    let mut z = base ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub(crate) mod streams {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const REINIT: u64 = 3;
    pub const IS_SAMPLE: u64 = 4;
    pub const HEAD: u64 = 5;
    pub const ORDERING: u64 = 6;
    pub const EVAL: u64 = 7;
}
