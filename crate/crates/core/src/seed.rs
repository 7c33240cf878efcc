//! Seed derivation. Every random stream in the pipeline is keyed off a
//! single 64-bit master seed plus a label and an index, so parallel work
//! never shares generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derive a sub-seed from `(master, label, indices)`.
pub fn derive(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut s = splitmix64(master ^ label_hash(label));
    for &i in indices {
        s = splitmix64(s ^ splitmix64(i));
    }
    s
}

pub fn rng(master: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, label, indices))
}

/// Short hex digest printed next to every output so runs can be matched
/// to the seed that produced them.
pub fn seed_digest(master: u64) -> String {
    let out = Sha256::digest(master.to_le_bytes());
    hex::encode(&out[..8])
}
