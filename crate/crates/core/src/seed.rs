//! Stable seed derivation. Every random stream in the crate is keyed off a
//! master seed plus a label so that parallel work never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `master` and a textual label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn rng_for(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label))
}

/// Hex SHA-256 of arbitrary bytes, truncated to 16 characters.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}
