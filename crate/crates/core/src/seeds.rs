//! Deterministic seed fan-out.
//!
//! A master seed is expanded into labelled substreams with
//! `derive_seed(master, label, indices)`: the SHA-256 digest of the
//! little-endian master seed, the UTF-8 label and each index (little-endian
//! `u64`), truncated to its first eight bytes. Any single record of a sweep
//! can therefore be regenerated in isolation from `(master, label, indices)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for index in indices {
        hasher.update(index.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// ChaCha8 generator seeded from a derived 64-bit seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
