//! Deterministic child-seed derivation.
//!
//! Parallelizable work (sampling chains, per-level bias probes, dataset
//! variants) derives one child seed per unit of work so results do not depend
//! on scheduling or interleaving.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream labels into an independent child seed.
pub fn derive_seed(base: u64, streams: &[u64]) -> u64 {
    let mut s = splitmix64(base ^ 0x6a09_e667_f3bc_c908);
    for &w in streams {
        s = splitmix64(s ^ splitmix64(w));
    }
    s
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
