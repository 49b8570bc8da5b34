//! Seed fan-out.
//!
//! Every stochastic step draws from a `ChaCha8Rng` seeded through the helpers
//! below, so one master seed fixes an entire experiment regardless of thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name of the PRNG used everywhere, recorded in manifests.
pub const PRNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

const SPLIT_SALT: u64 = 0x5EED_5B11_7000_0001;
const ROUND_SALT: u64 = 0x5EED_0000_0000_0002;
const CLASS_SALT: u64 = 0x5EED_C1A5_5000_0003;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-party seed: `master ^ party_id`.
pub fn party_seed(master: u64, party_id: usize) -> u64 {
    master ^ party_id as u64
}

/// Seed for a party's train/test split.
pub fn split_seed(party_seed: u64) -> u64 {
    mix(party_seed ^ SPLIT_SALT)
}

/// Seed for the shuffle of a party's local epoch in a given round.
pub fn round_seed(party_seed: u64, round: usize) -> u64 {
    mix(mix(party_seed ^ ROUND_SALT).wrapping_add(round as u64))
}

/// Seed for sampling within one class of a partitioning step.
pub fn class_seed(seed: u64, class: usize) -> u64 {
    mix(mix(seed ^ CLASS_SALT).wrapping_add(class as u64))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
