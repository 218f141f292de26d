//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by a
//! 64-bit seed. Independent consumers (nodes of a CPT generator, row chunks
//! of a sampler, cells of a sweep) get their own stream number on the same
//! key, or a derived seed from [`derive_seed`], so results never depend on
//! thread scheduling or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator keyed by `seed`, positioned at the start of stream `stream`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a master seed with a list of coordinates (SplitMix64 finalizer).
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    let mut h = master ^ 0x9E37_79B9_7F4A_7C15;
    for &c in coords {
        h = splitmix(h ^ splitmix(c.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
