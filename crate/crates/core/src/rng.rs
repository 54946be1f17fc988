//! Deterministic RNG streams.
//!
//! Every stochastic stage derives its own ChaCha8 stream from a root seed
//! plus a stable tag, so stages never share state and reordering one stage
//! cannot perturb another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream from a root seed and a purpose tag.
///
/// The (seed, tag) pair is hashed to the full 256-bit ChaCha key, so
/// distinct tags give statistically independent streams and the mapping is
/// stable across platforms and releases.
pub fn substream(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Derive a per-episode seed from a suite seed and episode index.
pub fn episode_seed(suite_seed: u64, episode_index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(suite_seed.to_le_bytes());
    hasher.update(b"episode");
    hasher.update(episode_index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
