//! Seed stream splitting.
//!
//! Every consumer of randomness derives its generator from one base seed and
//! a named stream: `ChaCha8Rng::seed_from_u64(base)` with the ChaCha stream
//! id set to `(tag << 32) | index`. Streams with different tags or indices
//! are independent; the same `(base, tag, index)` always yields the same
//! sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream tags. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Stream {
    World = 1,
    EncoderInit = 2,
    EpochPlan = 3,
    EpochOrder = 4,
    Mixer = 5,
    Negatives = 6,
    LossCheck = 7,
    Fixture = 8,
}

pub fn rng_for(base: u64, stream: Stream, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((stream as u64) << 32) | index as u64);
    rng
}

/// A 64-bit seed drawn from a derived stream, for APIs that take a plain seed.
pub fn derive_seed(base: u64, stream: Stream, index: u32) -> u64 {
    use rand::RngCore;
    rng_for(base, stream, index).next_u64()
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `std`'s hasher.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Stream index for a named item, so that seeds do not depend on list order.
pub fn name_index(name: &str) -> u32 {
    let h = fnv1a64(name.as_bytes());
    (h ^ (h >> 32)) as u32
}
