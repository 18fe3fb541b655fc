//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, role, counter)`: ChaCha8 keyed by
//! the seed, with the role as the ChaCha stream id and the counter selecting
//! the 64-bit word position. Sequential readers and random-access lookups
//! therefore see the same values, on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Independent sub-streams drawn from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    Interarrival = 1,
    Service = 2,
    JobType = 3,
    /// Fresh service clocks for jobs resumed after preemption.
    Resume = 4,
}

/// Sequential reader over one `(seed, role)` stream.
#[derive(Clone)]
pub struct CounterRng {
    inner: ChaCha8Rng,
}

impl CounterRng {
    pub fn new(seed: u64, role: StreamRole) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(role as u64);
        Self { inner }
    }

    /// Position the reader so the next draw is counter `k`.
    pub fn seek(&mut self, k: u64) {
        self.inner.set_word_pos(u128::from(k) * 2);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `(0, 1]`, 53 bits.
    pub fn next_open01(&mut self) -> f64 {
        to_open01(self.next_u64())
    }

    /// Exponential with the given rate.
    pub fn next_exp(&mut self, rate: f64) -> f64 {
        -self.next_open01().ln() / rate
    }
}

/// Random-access draw: the `k`-th 64-bit word of the `(seed, role)` stream.
pub fn draw(seed: u64, role: StreamRole, k: u64) -> u64 {
    let mut rng = CounterRng::new(seed, role);
    rng.seek(k);
    rng.next_u64()
}

pub fn to_open01(word: u64) -> f64 {
    ((word >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}
