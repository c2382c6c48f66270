//! Seeded, stream-separated random number generation.
//!
//! Every consumer (each env worker, the learner, evaluation, level sampling)
//! owns its own [`RngStream`] keyed by `(seed, stream_id)`, so adding draws in
//! one place never shifts the sequence seen by another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Well-known stream ids.
pub mod streams {
    pub const LEARNER: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const REVERSE: u64 = 4;
    pub const FORWARD: u64 = 5;
    pub const LEVELS: u64 = 6;
    pub const DEMOS: u64 = 7;
    pub const INIT: u64 = 8;
    pub const SUBSAMPLE: u64 = 9;
    pub const BATCHES: u64 = 10;
    /// Per-env streams are `ENV_BASE + env_index`.
    pub const ENV_BASE: u64 = 1 << 32;
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive an independent stream from this one's seed.
    pub fn fork(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() on empty range");
        self.inner.random_range(0..n)
    }

    /// Draw an index with probability proportional to `weights`.
    ///
    /// Returns `None` when all weights are zero. Negative or non-finite
    /// weights are treated as zero.
    pub fn weighted_index(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().filter(|w| w.is_finite() && **w > 0.0).sum();
        if total <= 0.0 {
            return None;
        }
        let target = self.uniform() * total;
        let mut acc = 0.0;
        let mut last = None;
        for (i, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                continue;
            }
            acc += w;
            last = Some(i);
            if target < acc {
                return Some(i);
            }
        }
        last
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Serialized position: seed, stream id and 128-bit word position.
    pub fn state_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out[..8].copy_from_slice(&self.seed.to_le_bytes());
        out[8..16].copy_from_slice(&self.stream_id.to_le_bytes());
        out[16..].copy_from_slice(&self.inner.get_word_pos().to_le_bytes());
        out
    }

    pub fn from_state_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 32 {
            return Err(Error::Checkpoint(format!(
                "rng state must be 32 bytes, got {}",
                bytes.len()
            )));
        }
        let seed = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let stream_id = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let word_pos = u128::from_le_bytes(bytes[16..].try_into().unwrap());
        let mut rng = Self::new(seed, stream_id);
        rng.inner.set_word_pos(word_pos);
        Ok(rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

impl PartialEq for RngStream {
    fn eq(&self, other: &Self) -> bool {
        self.state_bytes() == other.state_bytes()
    }
}
