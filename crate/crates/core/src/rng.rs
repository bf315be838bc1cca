//! Seeding scheme for reproducible random draws.
//!
//! Every stochastic component draws from its own ChaCha8 substream derived
//! from `(master seed, purpose label, index)`. The derivation is a fixed
//! FNV-1a/SplitMix64 mix, so a given master seed reproduces identical draws
//! regardless of thread count or evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes. Stable across platforms and releases,
/// unlike `DefaultHasher`.
fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; mixes the combined seed material.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the stream seed for `(master, label, index)`.
pub fn stream_seed(master: u64, label: &str, index: u64) -> u64 {
    splitmix(splitmix(master ^ fnv1a(label)).wrapping_add(index))
}

/// A generator positioned at the start of the named substream.
pub fn substream(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, label, index))
}
