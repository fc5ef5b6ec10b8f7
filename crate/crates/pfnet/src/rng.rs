//! Deterministic sub-seed derivation.
//!
//! Every consumer of randomness (each layer's initializer, the batch
//! shuffler) draws from its own stream seeded by `(run seed, label)`, so
//! adding a parameter or reordering construction never shifts the draws of
//! an unrelated component. The derivation is a fixed FNV-1a over the seed
//! bytes and the label, stable across platforms and runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// Derive a child seed from a run seed and a label.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(label.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// A ChaCha stream seeded by `(run seed, label)`.
pub fn sub_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, label))
}
