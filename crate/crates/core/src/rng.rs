//! Seeded, platform-independent random streams.
//!
//! Every random consumer owns a [`Stream`] derived from a 64-bit seed and a
//! stream tag, so independent parts of a run (path noise, shuffling, channel
//! draws) never share state and can be replayed in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Well-known stream tags.
pub mod tags {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const PATH: u64 = 4;
    pub const CHANNEL: u64 = 5;
    pub const FADING: u64 = 6;
    pub const ORACLE: u64 = 7;
}

/// A ChaCha8 stream with a cached Box–Muller pair.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64, tag: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(tag);
        Stream { rng, spare: None }
    }

    /// Derive a child stream; `(seed, tag, index)` fully determines it.
    pub fn substream(seed: u64, tag: u64, index: u64) -> Self {
        let mixed = splitmix64(seed ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        Self::new(mixed, tag)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on `[0, 1]` (closed), used for path times.
    pub fn uniform_closed(&mut self) -> f64 {
        // 53 random bits mapped onto the closed unit interval.
        let bits = self.rng.random::<u64>() >> 11;
        bits as f64 / ((1u64 << 53) - 1) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher–Yates, highest index first.
        for i in (1..items.len()).rev() {
            let j = self.rng.random_range(0..=i);
            items.swap(i, j);
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
