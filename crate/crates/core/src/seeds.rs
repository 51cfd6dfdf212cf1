//! Keyed hashing used to derive reproducible seeds.
//!
//! Every seed in a run is a pure function of the manifest seed and the
//! coordinates of the work item, so any single request can be replayed in
//! isolation.

use sha2::{Digest, Sha256};

/// Hashes `parts` under `key` and a domain tag into a 64-bit value.
///
/// Parts are length-prefixed so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn keyed_hash(key: u64, domain: &str, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(key.to_le_bytes());
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(out)
}

/// Seed of the `index`-th item drawn from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    keyed_hash(base, "item", &[&index.to_le_bytes()])
}

/// Seed for one edit, keyed by every coordinate of the work item.
pub fn edit_seed(run_seed: u64, identity_id: &str, image_index: usize, profession: &str, strength: f64) -> u64 {
    keyed_hash(
        run_seed,
        "edit",
        &[
            identity_id.as_bytes(),
            &(image_index as u64).to_le_bytes(),
            profession.as_bytes(),
            &strength.to_bits().to_le_bytes(),
        ],
    )
}

/// Paired noise and timestep seeds for the `sample`-th Monte-Carlo draw on
/// one image. They do not depend on the prompt, so the same draw is shared
/// by every candidate concept, and they do not depend on the total sample
/// count, so smaller sweeps are prefixes of larger ones.
pub fn sample_seeds(run_seed: u64, image_id: &str, sample: u32) -> (u64, u64) {
    let s = sample.to_le_bytes();
    (
        keyed_hash(run_seed, "noise", &[image_id.as_bytes(), &s]),
        keyed_hash(run_seed, "timestep", &[image_id.as_bytes(), &s]),
    )
}

/// Seed used to pick the edit subset of one identity.
pub fn subset_seed(run_seed: u64, identity_id: &str) -> u64 {
    keyed_hash(run_seed, "subset", &[identity_id.as_bytes()])
}

/// SHA-256 of arbitrary bytes as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
