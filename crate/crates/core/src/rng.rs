//! Seed derivation. Every random stream in the pipeline is a ChaCha8 stream
//! whose seed is a pure function of a master seed and a label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a child seed from `master` and a stage or stream label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed for the `index`-th independent stream under `label`.
pub fn derive_indexed(master: u64, label: &str, index: u64) -> u64 {
    derive_seed(master, &format!("{label}#{index}"))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, label: &str) -> Rng {
    rng_from_seed(derive_seed(master, label))
}
