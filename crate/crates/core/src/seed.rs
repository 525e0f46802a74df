//! Deterministic seed derivation for pipeline stages.
//!
//! Every random stage of an experiment draws its seed from the master seed
//! through [`derive_seed`], so the whole run is a pure function of the
//! experiment configuration.
//!
//! The derivation is fixed bit-exactly: SHA-256 over the concatenation of
//!
//! ```text
//! b"mea-reservoir-seed-v1" || master_seed (8 bytes LE)
//!     || tag_len (8 bytes LE) || tag (UTF-8) || index (8 bytes LE)
//! ```
//!
//! and the seed is the first 8 digest bytes read as a little-endian u64.

use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"mea-reservoir-seed-v1";

/// Derives a stage seed from `(master_seed, stage_tag, index)`.
pub fn derive_seed(master_seed: u64, stage_tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update(master_seed.to_le_bytes());
    hasher.update((stage_tag.len() as u64).to_le_bytes());
    hasher.update(stage_tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
