//! Seed derivation.
//!
//! A run carries one root seed. Every consumer derives its own stream from
//! the root and a label, so adding a consumer never shifts the draws of
//! another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a label.
pub fn derive(parent: u64, label: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(parent ^ splitmix64(h))
}

/// Derives a child seed from `parent`, a label and a counter.
pub fn derive_indexed(parent: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(parent, label) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(parent: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive(parent, label))
}

pub fn stream_indexed(parent: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_indexed(parent, label, index))
}
