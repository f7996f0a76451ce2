//! Seed derivation. Every random stream in the pipeline is a ChaCha8 generator
//! keyed by a root seed plus a stream label, so streams never overlap and a
//! single logged seed reproduces a whole run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a sequence of labels.
pub fn derive_seed(root: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix64(root), |acc, &l| mix64(acc ^ mix64(l.wrapping_add(0x632b_e59b_d9b4_e019))))
}

pub fn stream(root: u64, labels: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, labels))
}

/// Stream labels. Kept in one place so two subsystems never share a stream.
pub mod label {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const HELDOUT: u64 = 3;
    pub const CORPUS_TRAIN: u64 = 4;
    pub const CORPUS_TEST: u64 = 5;
    pub const BAYES: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}
