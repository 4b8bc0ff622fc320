//! Seed plumbing.
//!
//! All randomness in the toolkit starts from a single `u64` experiment seed.
//! Components derive their own sub-seed by hashing the parent seed together
//! with a component label, so adding or reordering components never shifts
//! the random stream another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive a sub-seed for `component` from `seed`.
pub fn derive_seed(seed: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(component.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Derive a sub-seed for the `index`-th member of `component`.
pub fn derive_indexed(seed: u64, component: &str, index: u64) -> u64 {
    derive_seed(derive_seed(seed, component), &index.to_string())
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn component_rng(seed: u64, component: &str) -> Rng {
    rng_from(derive_seed(seed, component))
}
