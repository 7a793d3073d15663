//! Portable seeded randomness for sampling and task construction.
//!
//! Task files must be reproducible across implementations, so every random
//! decision goes through [`StudyRng`], whose algorithm is fixed:
//!
//! * generator: ChaCha with 8 rounds, keyed by `seed_from_u64` (PCG32 seed
//!   expansion as specified by `rand_core`),
//! * bounded integers: `next_u64` with the `2^64 mod bound` low draws
//!   rejected, then reduced modulo the bound,
//! * shuffles: Fisher–Yates, walking from the last index down to 1,
//! * coin flips: lowest bit of `next_u64`.
//!
//! The name of this combination is [`RNG_ALGORITHM`] and is written into the
//! header of every task file.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifier recorded in task file headers.
pub const RNG_ALGORITHM: &str = "chacha8-seed_from_u64-fisher_yates-v1";

#[derive(Debug, Clone)]
pub struct StudyRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl StudyRng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this generator was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..bound`. Panics if `bound == 0`.
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "StudyRng::below called with bound 0");
        let bound = bound as u64;
        // 2^64 mod bound; draws below it are rejected so the rest divide evenly
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let v = self.next_u64();
            if v >= threshold {
                return (v % bound) as usize;
            }
        }
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
