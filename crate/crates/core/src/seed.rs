//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from
//! `derive(root, stream, index)`, so parallel work can partition the seed
//! space without sharing a generator.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(root: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream) ^ index)
}

// Stream tags.
pub const EASY_FRAMES: u64 = 1;
pub const HARD_FRAMES: u64 = 2;
pub const SPLIT: u64 = 3;
pub const MODEL_INIT: u64 = 4;
pub const SWITCH_INIT: u64 = 5;
pub const LWD_INIT: u64 = 6;
pub const EPOCH_SHUFFLE: u64 = 7;
pub const PROBE: u64 = 8;
