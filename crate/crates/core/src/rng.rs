//! Seed derivation for reproducible, schedule-independent randomness.
//!
//! Every stochastic event in a run draws from its own stream, keyed by the
//! master seed plus a purpose tag and event coordinates (stage, player, ...).
//! Two runs with the same master seed replay identically, and changing the
//! strategy does not shift the random draws of unrelated events — the basis
//! for common-random-number comparisons between strategies.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The RNG used everywhere in the crate. Pinned to a concrete algorithm so
/// streams never change out from under recorded results.
pub type SimRng = ChaCha12Rng;

/// Purpose tags for derived streams.
pub mod purpose {
    pub const TASKS: u64 = 0x01;
    pub const LLM_OUTPUT: u64 = 0x02;
    pub const DETECTOR: u64 = 0x03;
    pub const EDGE_CHOICE: u64 = 0x04;
    pub const GA: u64 = 0x05;
    pub const NATURE: u64 = 0x06;
    pub const RANDOM_STRATEGY: u64 = 0x07;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix the master seed with a list of tags into a single stream seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(master);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

/// Build the RNG stream for `(master, tags...)`.
pub fn stream(master: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, tags))
}
