//! Counter-based stream derivation.
//!
//! Every random event in the crate draws from a fresh `ChaCha8Rng` whose seed
//! is derived from the run seed plus integer coordinates of the event (domain
//! tag, env index, episode counter, iteration). Two consequences:
//!
//! - checkpoints only need to store the counters, never RNG internals, so a
//!   resumed run replays the exact stream an unbroken run would have used;
//! - worker threads never share RNG state, so thread count cannot reorder draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams for unrelated purposes disjoint even when their
/// counter tuples collide. Values are arbitrary but frozen: changing them
/// changes every sampled number in every run.
pub mod domain {
    pub const NET_INIT: u64 = 0x01;
    pub const ENV_RESET: u64 = 0x02;
    pub const ROLLOUT: u64 = 0x03;
    pub const SHUFFLE: u64 = 0x04;
    pub const EVAL_PERTURB: u64 = 0x05;
}

/// splitmix64; the standard finalizer-style mixer, used here to fold counters
/// into a seed one word at a time.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d4a4acd61be5ba);
    z ^ (z >> 31)
}

/// Derives a 64-bit stream key from the run seed and event coordinates.
pub fn derive_key(seed: u64, words: &[u64]) -> u64 {
    let mut state = seed;
    let mut key = splitmix64(&mut state);
    for &w in words {
        state ^= w.wrapping_mul(0x9e3779b97f4a7c15);
        key ^= splitmix64(&mut state);
    }
    key
}

/// Fresh RNG for the event identified by `words` (domain tag first).
pub fn stream_rng(seed: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, words))
}
