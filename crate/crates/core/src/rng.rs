//! Seed derivation and random streams.
//!
//! Every random object is drawn from a ChaCha8 stream whose 64-bit seed is
//! obtained by folding a list of integer tags (replicate index, curve index,
//! block index, purpose tag) into the master seed with the SplitMix64
//! finalizer. The stream for a given tag path is therefore fixed no matter
//! how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags used when deriving sub-seeds.
pub mod tag {
    pub const SAMPLE_X: u64 = 0x5831;
    pub const SAMPLE_Y: u64 = 0x5932;
    pub const CALIBRATION: u64 = 0xCA11;
    pub const WMW: u64 = 0x3A3A;
    pub const CFF: u64 = 0xCFF0;
    pub const HKR1: u64 = 0x4B31;
    pub const HKR2: u64 = 0x4B32;
    pub const OUTER: u64 = 0x07E0;
    pub const INNER_A: u64 = 0x1A;
    pub const INNER_B: u64 = 0x1B;
    pub const DIFF_X: u64 = 0xD1;
    pub const DIFF_Z: u64 = 0xD2;
    pub const SUBSAMPLE: u64 = 0x5B5B;
    pub const REPLICATE: u64 = 0x7E7E;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `tags` into `seed`, one SplitMix64 round per tag.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// ChaCha8 stream for the tag path `tags` under `seed`.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}
