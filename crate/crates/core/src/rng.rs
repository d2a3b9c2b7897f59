//! Seed derivation shared by every stochastic stage.
//!
//! Each record gets its own generator derived from `(global seed, stream tag, key)`,
//! so output never depends on corpus order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StageRng = ChaCha8Rng;

/// Derive a 64-bit seed from the global seed, a stream tag and a record key.
pub fn derive_seed(global_seed: u64, stream: &str, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update((stream.len() as u64).to_le_bytes());
    hasher.update(stream.as_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for one record of one stage.
pub fn record_rng(global_seed: u64, stream: &str, key: &str) -> (u64, StageRng) {
    let seed = derive_seed(global_seed, stream, key);
    (seed, rng_from_seed(seed))
}
