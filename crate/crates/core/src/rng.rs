//! Seeded random streams.
//!
//! Every consumer that needs randomness derives its own ChaCha stream from a
//! `(seed, stream id)` pair, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Independent stream `id` under `seed`.
pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Stream for conditional `k` of a training or initialization run.
pub fn conditional_stream(seed: u64, k: usize) -> Stream {
    stream(seed, k as u64)
}

/// Child seed derived from a parent stream; used to fan a single stream out
/// into per-item streams (e.g. one per MCMC chain group).
pub(crate) fn child(seed: u64, a: u64, b: u64) -> Stream {
    // splitmix64 finalizer over the packed ids keeps children well separated
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    stream(z, a)
}
