//! Deterministic seed derivation.
//!
//! Every stochastic component (dataset draws, shuffles, noise, init) gets its
//! own stream derived from the master seed, a purpose tag and an index, so
//! work can be reordered without changing results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_tag(tag: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a child seed from `(master, tag, idx)`.
pub fn derive_seed(master: u64, tag: &str, idx: u64) -> u64 {
    splitmix64(splitmix64(master ^ hash_tag(tag)).wrapping_add(idx))
}

/// ChaCha stream for a derived seed.
pub fn seeded_rng(master: u64, tag: &str, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, idx))
}
