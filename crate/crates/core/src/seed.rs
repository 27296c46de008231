//! Seed derivation. Every trial and every terminal gets its own ChaCha8
//! stream derived from the master seed, so results do not depend on how
//! trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.wrapping_mul(GOLDEN))
}

/// Seed of trial `index` under `master`.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    mix(master, index)
}

/// Stream labels inside one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Source sampling.
    Source,
    /// Local randomness of terminal `t` (1-based).
    Terminal(usize),
}

impl Stream {
    fn label(self) -> u64 {
        match self {
            Stream::Source => 0,
            Stream::Terminal(t) => t as u64,
        }
    }
}

/// RNG for `stream` inside the trial seeded with `trial`.
pub fn stream_rng(trial: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(trial, stream.label().wrapping_add(0x5157)))
}
