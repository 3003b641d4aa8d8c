//! Deterministic seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha stream whose seed
//! is derived by hashing the master seed together with a purpose label and
//! integer indices. Derived streams are independent of each other and of
//! iteration order, so parallel and sequential runs produce bit-identical
//! results, and adding a consumer never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `master` for the purpose named by `label`,
/// distinguished by `indices` (split number, model index, ...).
pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    for &index in indices {
        hasher.update(index.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

/// A fresh RNG for the stream identified by `(master, label, indices)`.
pub fn seeded_rng(master: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, indices))
}
