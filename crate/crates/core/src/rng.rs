//! Reproducible random streams.
//!
//! Every random draw in the crate comes from ChaCha8, a counter-based stream
//! cipher used as a PRNG (`rand_chacha::ChaCha8Rng`). A master seed fixes the
//! 256-bit key; a task path such as `(scenario, grid index, replicate)` is
//! hashed with SplitMix64 into the 64-bit stream selector. Each task therefore
//! owns an independent stream, and results do not depend on how tasks are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// ChaCha8 keyed by a master seed.
pub type StreamRng = ChaCha8Rng;

/// Distinct tags for the places that open substreams, so that two consumers
/// handed the same seed never share a stream.
pub mod domain {
    pub const SPLIT: u64 = 1;
    pub const POWER: u64 = 2;
    pub const TRUNCATED_MC: u64 = 3;
    pub const SCENARIO: u64 = 4;
    pub const OUTCOME_SELECTION: u64 = 5;
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x6A09_E667_F3BC_C908u64, |acc, &x| mix64(acc ^ mix64(x)))
}

/// Generator for the task identified by `path` under `seed`.
pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::from_seed(key_from_seed(seed));
    rng.set_stream(stream_id(path));
    rng
}

/// Hash a label into a path component.
pub fn label_id(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
        })
}
