//! Deterministic random numbers for splits and bootstrap resampling.
//!
//! The generator is xoshiro256** seeded through SplitMix64 (the reference
//! seeding procedure of Blackman and Vigna), so every index stream can be
//! reproduced from its published algorithm in any language. Bounded integers
//! use Lemire's multiply-and-reject method on the raw 64-bit outputs and
//! shuffles are a descending Fisher-Yates pass; neither depends on the
//! sampling internals of the `rand` crate.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type PaceRng = Xoshiro256StarStar;

pub fn seeded(seed: u64) -> PaceRng {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Uniform integer in `[0, bound)`. `bound` must be non-zero.
pub fn below(rng: &mut PaceRng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let mut m = (rng.next_u64() as u128) * (bound as u128);
    let mut low = m as u64;
    if low < bound {
        let threshold = bound.wrapping_neg() % bound;
        while low < threshold {
            m = (rng.next_u64() as u128) * (bound as u128);
            low = m as u64;
        }
    }
    (m >> 64) as u64
}

/// In-place Fisher-Yates shuffle: for i from len-1 down to 1, swap i with below(i+1).
pub fn shuffle<T>(rng: &mut PaceRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
