//! Seed derivation helpers.
//!
//! All randomness in the crate flows from explicit integer seeds through
//! ChaCha streams. Derived seeds use a splitmix64 finalizer so that
//! (base, salt) pairs map to well-separated streams and adding new salted
//! consumers never perturbs existing ones.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Derives a child seed from a base seed and a salt.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a string identity (e.g. a
/// scan id), independent of enumeration order.
pub fn mix_seed_str(base: u64, s: &str) -> u64 {
    // FNV-1a over the bytes, then splitmix with the base.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix_seed(base, h)
}

/// Seeded ChaCha stream for a derived purpose.
pub fn seeded(base: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(base, salt))
}
