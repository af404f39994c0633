//! Pinned pseudo-random generator.
//!
//! Every stochastic component draws from [`SslRng`], a xoshiro256++ generator
//! whose 256-bit state is expanded from a 64-bit seed with SplitMix64. Child
//! streams are derived with [`derive_seed`], so per-clip and per-epoch draws
//! do not depend on processing order.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SslRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> SslRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Named child stream, so unrelated consumers of one seed never overlap.
pub fn derive_named(seed: u64, name: &str) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    derive_seed(seed, h)
}
