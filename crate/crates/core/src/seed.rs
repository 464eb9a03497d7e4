//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by `(master, domain, index)` so
//! that results never depend on scheduling order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for stream `index` within `domain`.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let mut h = mix64(master);
    for b in domain.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ mix64(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, domain: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, domain, index))
}
