//! Tanh-squashed diagonal Gaussian policy head.

use super::nn::{ForwardCache, Mlp};
use crate::scalar::Scalar;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `log(1 - tanh(u)^2)` without cancellation.
#[inline]
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Result of a policy forward pass on a batch.
pub struct PolicySample<T> {
    pub cache: ForwardCache<T>,
    pub batch: usize,
    pub action_dim: usize,
    pub noise: Vec<T>,
    /// Pre-squash sample `mean + std * noise`.
    pub pre_tanh: Vec<T>,
    pub std: Vec<T>,
    /// 1 where the log-std was inside its clamp range.
    pub log_std_live: Vec<bool>,
    pub action: Vec<T>,
    pub log_prob: Vec<f64>,
}

/// Evaluate the policy with explicit standard-normal `noise` (`batch x dim`).
pub fn sample_with_noise<T: Scalar>(
    actor: &Mlp<T>,
    states: &[T],
    batch: usize,
    noise: &[T],
    log_std_range: (f64, f64),
) -> PolicySample<T> {
    let dim = actor.shape().output_dim() / 2;
    let cache = actor.forward(states, batch);
    let out = &cache.output;
    let n = batch * dim;
    let mut pre_tanh = vec![T::zero(); n];
    let mut std = vec![T::zero(); n];
    let mut live = vec![true; n];
    let mut action = vec![T::zero(); n];
    let mut log_prob = vec![0.0f64; batch];
    for b in 0..batch {
        let row = &out[b * 2 * dim..(b + 1) * 2 * dim];
        let mut lp = 0.0;
        for j in 0..dim {
            let k = b * dim + j;
            let raw = row[dim + j].f64();
            let ls = raw.clamp(log_std_range.0, log_std_range.1);
            live[k] = raw > log_std_range.0 && raw < log_std_range.1;
            let s = ls.exp();
            let eps = noise[k].f64();
            let u = row[j].f64() + s * eps;
            pre_tanh[k] = T::of(u);
            std[k] = T::of(s);
            action[k] = T::of(u.tanh());
            lp += -0.5 * eps * eps - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
        }
        log_prob[b] = lp;
    }
    PolicySample {
        cache,
        batch,
        action_dim: dim,
        noise: noise.to_vec(),
        pre_tanh,
        std,
        log_std_live: live,
        action,
        log_prob,
    }
}

/// Deterministic action `tanh(mean)`.
pub fn mean_action<T: Scalar>(actor: &Mlp<T>, states: &[T], batch: usize) -> Vec<T> {
    let dim = actor.shape().output_dim() / 2;
    let out = actor.predict(states, batch);
    let mut a = Vec::with_capacity(batch * dim);
    for b in 0..batch {
        for j in 0..dim {
            a.push(T::of(out[b * 2 * dim + j].f64().tanh()));
        }
    }
    a
}
