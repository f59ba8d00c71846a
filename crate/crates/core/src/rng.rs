//! Seed derivation. Every random choice in the crate flows from a `u64` seed
//! through these helpers, so re-generation is byte-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The deterministic generator used throughout.
pub type Seeded = ChaCha8Rng;

pub fn seeded(seed: u64) -> Seeded {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; decorrelates derived seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for (`stream`, `index`) under `base`.
/// Streams keep e.g. train and eval task seeds disjoint.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ stream.wrapping_mul(0xa076_1d64_78bd_642f)) ^ index)
}

pub mod stream {
    pub const TRAIN_TASKS: u64 = 1;
    pub const EVAL_TASKS: u64 = 2;
    pub const SHARED_FREQS: u64 = 3;
    pub const EPISODE_POINTS: u64 = 4;
    pub const TASK_PARAMS: u64 = 5;
    pub const INIT: u64 = 6;
    pub const BATCH_ORDER: u64 = 7;
    pub const QUERY_DRAW: u64 = 8;
    pub const HMM_BANK: u64 = 9;
    pub const HMM_SPLIT: u64 = 10;
    pub const HMM_SEQUENCE: u64 = 11;
    pub const SGD_FIT: u64 = 12;
    pub const CODEC_TEST: u64 = 13;
}
