//! Soft actor-critic with a layer-normalized critic ensemble.
//!
//! Targets bootstrap from the minimum of two randomly chosen target critics;
//! the actor maximizes the ensemble mean. The temperature is learned against
//! a target entropy of `-action_dim` unless configured otherwise.

mod adam;
mod checkpoint;
pub mod kernels;
pub mod nn;
pub mod policy;

pub use adam::Adam;
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use nn::{Mlp, MlpShape};

use serde::{Deserialize, Serialize};

use crate::buffers::Batch;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use policy::{mean_action, sample_with_noise};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub num_critics: usize,
    pub sampled_critics: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub init_temperature: f64,
    pub learnable_temperature: bool,
    /// `None` means `-action_dim`.
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    /// Critic updates per environment step.
    pub utd: f64,
    /// Critic updates per actor/temperature update.
    pub actor_update_every: usize,
    pub seed_steps: usize,
    pub buffer_capacity: usize,
    /// Offline share of each minibatch.
    pub offline_ratio: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Gain of the orthogonal init of output layers.
    pub final_layer_gain: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            num_critics: 10,
            sampled_critics: 2,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            temperature_lr: 3e-4,
            init_temperature: 1.0,
            learnable_temperature: true,
            target_entropy: None,
            batch_size: 256,
            utd: 10.0,
            actor_update_every: 20,
            seed_steps: 5000,
            buffer_capacity: 1_000_000,
            offline_ratio: 0.5,
            log_std_min: -20.0,
            log_std_max: 2.0,
            final_layer_gain: 1e-2,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::config(format!("learner.{k}"), m));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one positive layer width");
        }
        if self.num_critics == 0 {
            return bad("num_critics", "must be at least 1");
        }
        if self.sampled_critics == 0 || self.sampled_critics > self.num_critics {
            return bad("sampled_critics", "must lie in [1, num_critics]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau", "must lie in [0, 1]");
        }
        for (k, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("temperature_lr", self.temperature_lr),
            ("init_temperature", self.init_temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(k, "must be positive");
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.utd > 0.0 && self.utd.is_finite()) {
            return bad("utd", "must be positive");
        }
        if self.actor_update_every == 0 {
            return bad("actor_update_every", "must be at least 1");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity", "must be at least 1");
        }
        if !(self.offline_ratio > 0.0 && self.offline_ratio <= 1.0) {
            return bad("offline_ratio", "must lie in (0, 1]");
        }
        if self.log_std_min >= self.log_std_max {
            return bad("log_std_min", "must be below log_std_max");
        }
        Ok(())
    }
}

/// Minibatch converted to the learner's scalar type.
pub struct TensorBatch<T> {
    pub len: usize,
    pub states: Vec<T>,
    /// Row-wise `[state, action]`.
    pub state_actions: Vec<T>,
    pub next_states: Vec<T>,
    pub rewards: Vec<f64>,
    pub terminals: Vec<bool>,
}

impl<T: Scalar> TensorBatch<T> {
    pub fn from_batch(b: &Batch) -> Self {
        let (sd, ad) = (b.state_dim, b.action_dim);
        let mut sa = Vec::with_capacity(b.len * (sd + ad));
        for r in 0..b.len {
            sa.extend(b.states[r * sd..(r + 1) * sd].iter().map(|&v| T::of(v)));
            sa.extend(b.actions[r * ad..(r + 1) * ad].iter().map(|&v| T::of(v)));
        }
        Self {
            len: b.len,
            states: b.states.iter().map(|&v| T::of(v)).collect(),
            state_actions: sa,
            next_states: b.next_states.iter().map(|&v| T::of(v)).collect(),
            rewards: b.rewards.clone(),
            terminals: b.terminals.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    pub mean_q: f64,
    pub mean_target: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ActorStats {
    pub actor_loss: f64,
    pub temperature_loss: f64,
    pub entropy: f64,
    pub temperature: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateMetrics {
    pub critic_updates: usize,
    pub actor_updates: usize,
    pub critic: Option<CriticStats>,
    pub actor: Option<ActorStats>,
}

/// Actor loss and its parameter gradient for fixed noise.
pub struct ActorGrad<T> {
    pub loss: f64,
    pub grads: Vec<T>,
    pub log_probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Learner<T> {
    cfg: LearnerConfig,
    state_dim: usize,
    action_dim: usize,
    actor: Mlp<T>,
    critics: Vec<Mlp<T>>,
    targets: Vec<Mlp<T>>,
    log_temperature: f64,
    actor_opt: Adam<T>,
    critic_opts: Vec<Adam<T>>,
    temperature_opt: Adam<f64>,
    rng: RngStream,
    critic_updates: u64,
    actor_updates: u64,
}

impl<T: Scalar> Learner<T> {
    pub fn new(cfg: LearnerConfig, state_dim: usize, action_dim: usize, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(2 * action_dim);
        let mut critic_sizes = vec![state_dim + action_dim];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let actor = Mlp::init(MlpShape::new(&actor_sizes, false), cfg.final_layer_gain, rng);
        let critics: Vec<Mlp<T>> = (0..cfg.num_critics)
            .map(|_| Mlp::init(MlpShape::new(&critic_sizes, true), cfg.final_layer_gain, rng))
            .collect();
        let targets = critics.clone();
        let actor_opt = Adam::new(actor.params.len(), cfg.actor_lr);
        let critic_opts = critics
            .iter()
            .map(|c| Adam::new(c.params.len(), cfg.critic_lr))
            .collect();
        Ok(Self {
            log_temperature: cfg.init_temperature.ln(),
            temperature_opt: Adam::new(1, cfg.temperature_lr),
            rng: rng.fork(crate::rng::streams::LEARNER),
            cfg,
            state_dim,
            action_dim,
            actor,
            critics,
            targets,
            actor_opt,
            critic_opts,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actor(&self) -> &Mlp<T> {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp<T> {
        &mut self.actor
    }

    pub fn critics(&self) -> &[Mlp<T>] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [Mlp<T>] {
        &mut self.critics
    }

    pub fn targets(&self) -> &[Mlp<T>] {
        &self.targets
    }

    pub fn targets_mut(&mut self) -> &mut [Mlp<T>] {
        &mut self.targets
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn log_temperature(&self) -> f64 {
        self.log_temperature
    }

    pub fn set_log_temperature(&mut self, v: f64) {
        self.log_temperature = v;
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    fn log_std_range(&self) -> (f64, f64) {
        (self.cfg.log_std_min, self.cfg.log_std_max)
    }

    /// Actions in the unit box for `n` row-major states.
    pub fn act_batch(&self, states: &[f64], n: usize, deterministic: bool, rng: &mut RngStream) -> Result<Vec<f64>> {
        if states.len() != n * self.state_dim {
            return Err(Error::DimMismatch {
                what: "state",
                expected: n * self.state_dim,
                found: states.len(),
            });
        }
        let s: Vec<T> = states.iter().map(|&v| T::of(v)).collect();
        let a = if deterministic {
            mean_action(&self.actor, &s, n)
        } else {
            let noise: Vec<T> = (0..n * self.action_dim).map(|_| T::of(rng.normal())).collect();
            sample_with_noise(&self.actor, &s, n, &noise, self.log_std_range()).action
        };
        let out: Vec<f64> = a.iter().map(|v| v.f64()).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actor output"));
        }
        Ok(out)
    }

    pub fn act(&self, state: &[f64], deterministic: bool, rng: &mut RngStream) -> Result<Vec<f64>> {
        self.act_batch(state, 1, deterministic, rng)
    }

    /// Two distinct target-critic indices, uniformly without replacement.
    fn sample_target_subset(&mut self) -> Vec<usize> {
        let n = self.cfg.num_critics;
        let k = self.cfg.sampled_critics;
        let mut idx = rand::seq::index::sample(&mut self.rng, n, k).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Bootstrapped targets for a batch with explicit next-action noise and
    /// target subset.
    pub fn critic_targets(&self, batch: &TensorBatch<T>, next_noise: &[T], subset: &[usize]) -> Vec<f64> {
        let n = batch.len;
        let next = sample_with_noise(&self.actor, &batch.next_states, n, next_noise, self.log_std_range());
        let mut next_sa = Vec::with_capacity(n * (self.state_dim + self.action_dim));
        for r in 0..n {
            next_sa.extend_from_slice(&batch.next_states[r * self.state_dim..(r + 1) * self.state_dim]);
            next_sa.extend_from_slice(&next.action[r * self.action_dim..(r + 1) * self.action_dim]);
        }
        let mut min_q = vec![f64::INFINITY; n];
        for &i in subset {
            let q = self.targets[i].predict(&next_sa, n);
            for (m, v) in min_q.iter_mut().zip(&q) {
                *m = m.min(v.f64());
            }
        }
        let alpha = self.temperature();
        let gamma = self.cfg.gamma;
        (0..n)
            .map(|r| {
                let not_done = if batch.terminals[r] { 0.0 } else { 1.0 };
                batch.rewards[r] + gamma * not_done * (min_q[r] - alpha * next.log_prob[r])
            })
            .collect()
    }

    /// Mean squared error over critics and rows, with per-critic gradients.
    pub fn critic_loss_grads(&self, batch: &TensorBatch<T>, targets: &[f64]) -> (f64, f64, Vec<Vec<T>>) {
        let n = batch.len;
        let scale = 1.0 / (n * self.critics.len()) as f64;
        let mut loss = 0.0;
        let mut mean_q = 0.0;
        let grads = self
            .critics
            .iter()
            .map(|critic| {
                let cache = critic.forward(&batch.state_actions, n);
                let mut d = vec![T::zero(); n];
                for r in 0..n {
                    let q = cache.output[r].f64();
                    let err = q - targets[r];
                    loss += err * err * scale;
                    mean_q += q * scale;
                    d[r] = T::of(2.0 * err * scale);
                }
                let mut g = vec![T::zero(); critic.params.len()];
                critic.backward(&cache, &d, Some(&mut g), false);
                g
            })
            .collect();
        (loss, mean_q, grads)
    }

    pub fn update_critics(&mut self, batch: &TensorBatch<T>) -> Result<CriticStats> {
        let noise: Vec<T> = (0..batch.len * self.action_dim)
            .map(|_| T::of(self.rng.normal()))
            .collect();
        let subset = self.sample_target_subset();
        let targets = self.critic_targets(batch, &noise, &subset);
        let (loss, mean_q, grads) = self.critic_loss_grads(batch, &targets);
        if !loss.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        for ((critic, opt), g) in self.critics.iter_mut().zip(&mut self.critic_opts).zip(&grads) {
            opt.step(&mut critic.params, g);
        }
        self.critic_updates += 1;
        Ok(CriticStats {
            loss,
            mean_q,
            mean_target: targets.iter().sum::<f64>() / targets.len().max(1) as f64,
        })
    }

    /// `mean(alpha * log_pi - mean_i Q_i(s, a))` for reparameterized actions.
    pub fn actor_loss_grads(&self, states: &[T], n: usize, noise: &[T]) -> ActorGrad<T> {
        let ad = self.action_dim;
        let sd = self.state_dim;
        let alpha = self.temperature();
        let sample = sample_with_noise(&self.actor, states, n, noise, self.log_std_range());
        let mut sa = Vec::with_capacity(n * (sd + ad));
        for r in 0..n {
            sa.extend_from_slice(&states[r * sd..(r + 1) * sd]);
            sa.extend_from_slice(&sample.action[r * ad..(r + 1) * ad]);
        }
        let n_critics = self.critics.len() as f64;
        let d_q = vec![T::of(-1.0 / (n as f64 * n_critics)); n];
        let mut d_action = vec![0.0f64; n * ad];
        let mut q_mean = 0.0;
        for critic in &self.critics {
            let cache = critic.forward(&sa, n);
            q_mean += cache.output.iter().map(|v| v.f64()).sum::<f64>() / (n as f64 * n_critics);
            let dx = critic
                .backward(&cache, &d_q, None, true)
                .expect("input gradient requested");
            for r in 0..n {
                for j in 0..ad {
                    d_action[r * ad + j] += dx[r * (sd + ad) + sd + j].f64();
                }
            }
        }
        let mean_lp = sample.log_prob.iter().sum::<f64>() / n as f64;
        let loss = alpha * mean_lp - q_mean;
        let inv_n = 1.0 / n as f64;
        let mut d_out = vec![T::zero(); n * 2 * ad];
        for r in 0..n {
            for j in 0..ad {
                let k = r * ad + j;
                let a = sample.action[k].f64();
                let g_u = d_action[k] * (1.0 - a * a) + alpha * inv_n * 2.0 * a;
                d_out[r * 2 * ad + j] = T::of(g_u);
                let g_ls = if sample.log_std_live[k] {
                    g_u * sample.std[k].f64() * sample.noise[k].f64() - alpha * inv_n
                } else {
                    0.0
                };
                d_out[r * 2 * ad + ad + j] = T::of(g_ls);
            }
        }
        let mut grads = vec![T::zero(); self.actor.params.len()];
        self.actor.backward(&sample.cache, &d_out, Some(&mut grads), false);
        ActorGrad {
            loss,
            grads,
            log_probs: sample.log_prob,
        }
    }

    /// Gradient of `mean(-log_alpha * (log_pi + target_entropy))` in `log_alpha`.
    pub fn temperature_grad(&self, log_probs: &[f64]) -> (f64, f64) {
        let h = self.target_entropy();
        let mean = log_probs.iter().map(|lp| lp + h).sum::<f64>() / log_probs.len().max(1) as f64;
        (-self.log_temperature * mean, -mean)
    }

    pub fn update_actor_and_temperature(&mut self, batch: &TensorBatch<T>) -> Result<ActorStats> {
        let noise: Vec<T> = (0..batch.len * self.action_dim)
            .map(|_| T::of(self.rng.normal()))
            .collect();
        let ag = self.actor_loss_grads(&batch.states, batch.len, &noise);
        if !ag.loss.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        let (temp_loss, temp_grad) = self.temperature_grad(&ag.log_probs);
        if !temp_loss.is_finite() {
            return Err(Error::NonFinite("temperature loss"));
        }
        self.actor_opt.step(&mut self.actor.params, &ag.grads);
        if self.cfg.learnable_temperature {
            let mut lt = [self.log_temperature];
            self.temperature_opt.step(&mut lt, &[temp_grad]);
            self.log_temperature = lt[0];
        }
        self.actor_updates += 1;
        let entropy = -ag.log_probs.iter().sum::<f64>() / ag.log_probs.len().max(1) as f64;
        Ok(ActorStats {
            actor_loss: ag.loss,
            temperature_loss: temp_loss,
            entropy,
            temperature: self.temperature(),
        })
    }

    /// `target <- (1 - tau) target + tau online`.
    pub fn polyak_update(&mut self) {
        let tau = T::of(self.cfg.tau);
        let keep = T::one() - tau;
        for (t, o) in self.targets.iter_mut().zip(&self.critics) {
            for (tp, &op) in t.params.iter_mut().zip(&o.params) {
                *tp = keep * *tp + tau * op;
            }
        }
    }

    /// One critic step, Polyak averaging, and an actor/temperature step when
    /// the critic-update count hits a multiple of `actor_update_every`.
    pub fn gradient_step(&mut self, batch: &Batch) -> Result<(CriticStats, Option<ActorStats>)> {
        let tb = TensorBatch::<T>::from_batch(batch);
        let c = self.update_critics(&tb)?;
        self.polyak_update();
        let a = if self.critic_updates.is_multiple_of(self.cfg.actor_update_every as u64) {
            Some(self.update_actor_and_temperature(&tb)?)
        } else {
            None
        };
        Ok((c, a))
    }
}

/// Fractional update-to-data accounting: `utd * steps` critic updates,
/// carrying the remainder between calls.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateSchedule {
    utd: f64,
    carry: f64,
}

impl UpdateSchedule {
    pub fn new(utd: f64) -> Self {
        Self { utd, carry: 0.0 }
    }

    pub fn updates_for(&mut self, env_steps: usize) -> usize {
        let total = self.carry + self.utd * env_steps as f64;
        let whole = (total + 1e-9).floor();
        self.carry = (total - whole).max(0.0);
        whole as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffers::Batch;

    fn small_cfg() -> LearnerConfig {
        LearnerConfig {
            hidden: vec![16, 16],
            num_critics: 4,
            batch_size: 8,
            ..LearnerConfig::default()
        }
    }

    #[test]
    fn update_schedule_counts() {
        let mut s = UpdateSchedule::new(10.0);
        assert_eq!(s.updates_for(1), 10);
        let mut w = UpdateSchedule::new(0.5);
        assert_eq!(w.updates_for(32), 16);
        assert_eq!(w.updates_for(1), 0);
        assert_eq!(w.updates_for(1), 1);
    }

    #[test]
    fn zero_output_layer_gives_zero_action() {
        let mut rng = RngStream::new(0, 0);
        let mut l = Learner::<f64>::new(small_cfg(), 2, 2, &mut rng).unwrap();
        l.actor_mut().zero_output_layer();
        let a = l.act(&[3.0, 4.0], true, &mut rng).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn actions_strictly_inside_box() {
        let mut rng = RngStream::new(1, 0);
        let mut l = Learner::<f32>::new(small_cfg(), 2, 2, &mut rng).unwrap();
        // Large outputs push tanh towards saturation.
        for p in l.actor_mut().params.iter_mut() {
            *p *= 50.0;
        }
        for i in 0..100 {
            let s = [i as f64 * 0.1, -(i as f64) * 0.05];
            for det in [true, false] {
                let a = l.act(&s, det, &mut rng).unwrap();
                assert!(a.iter().all(|v| v.abs() <= 1.0), "{a:?}");
            }
        }
    }

    #[test]
    fn stochastic_action_reproducible() {
        let l = Learner::<f64>::new(small_cfg(), 2, 2, &mut RngStream::new(5, 0)).unwrap();
        let a = l.act(&[1.0, 1.0], false, &mut RngStream::new(9, 9)).unwrap();
        let b = l.act(&[1.0, 1.0], false, &mut RngStream::new(9, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn target_entropy_default() {
        let l = Learner::<f64>::new(small_cfg(), 2, 2, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(l.target_entropy(), -2.0);
    }

    #[test]
    fn config_validation_names_keys() {
        let cfg = LearnerConfig {
            sampled_critics: 11,
            ..LearnerConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "learner.sampled_critics"),
            other => panic!("{other:?}"),
        }
    }

    fn f64_learner(seed: u64) -> Learner<f64> {
        Learner::new(small_cfg(), 3, 2, &mut RngStream::new(seed, 0)).unwrap()
    }

    fn random_batch(n: usize, rng: &mut RngStream) -> Batch {
        let mut b = Batch::zeros(n, 3, 2);
        b.states.iter_mut().for_each(|v| *v = rng.uniform_range(-1.0, 1.0));
        b.next_states.iter_mut().for_each(|v| *v = rng.uniform_range(-1.0, 1.0));
        b.actions.iter_mut().for_each(|v| *v = rng.uniform_range(-0.9, 0.9));
        for r in 0..n {
            b.rewards[r] = rng.uniform();
            b.terminals[r] = r % 3 == 0;
        }
        b
    }

    fn normals(n: usize, rng: &mut RngStream) -> Vec<f64> {
        (0..n).map(|_| rng.normal()).collect()
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(11, 0);
        let mut l = f64_learner(2);
        let tb = TensorBatch::<f64>::from_batch(&random_batch(6, &mut rng));
        let targets: Vec<f64> = (0..6).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let (_, _, grads) = l.critic_loss_grads(&tb, &targets);
        let h = 1e-6;
        for k in (0..l.critics[1].params.len()).step_by(17) {
            let orig = l.critics[1].params[k];
            l.critics[1].params[k] = orig + h;
            let up = l.critic_loss_grads(&tb, &targets).0;
            l.critics[1].params[k] = orig - h;
            let down = l.critic_loss_grads(&tb, &targets).0;
            l.critics[1].params[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads[1][k]).abs() < 1e-4, "param {k}: fd {fd} vs {}", grads[1][k]);
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(12, 0);
        let mut l = f64_learner(3);
        l.set_log_temperature(0.3f64.ln());
        // Scale up the output layer so the squash and log-std terms matter.
        for p in l.actor_mut().params.iter_mut() {
            *p *= 3.0;
        }
        let tb = TensorBatch::<f64>::from_batch(&random_batch(5, &mut rng));
        let noise = normals(10, &mut rng);
        let ag = l.actor_loss_grads(&tb.states, 5, &noise);
        let h = 1e-6;
        for k in 0..l.actor.params.len() {
            let orig = l.actor.params[k];
            l.actor.params[k] = orig + h;
            let up = l.actor_loss_grads(&tb.states, 5, &noise).loss;
            l.actor.params[k] = orig - h;
            let down = l.actor_loss_grads(&tb.states, 5, &noise).loss;
            l.actor.params[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - ag.grads[k]).abs() < 1e-4, "param {k}: fd {fd} vs {}", ag.grads[k]);
        }
    }

    #[test]
    fn terminal_and_undiscounted_targets() {
        let mut rng = RngStream::new(13, 0);
        let l = f64_learner(4);
        let mut b = random_batch(4, &mut rng);
        b.rewards = vec![1.0, 0.5, 0.0, 1.0];
        b.terminals = vec![true; 4];
        let tb = TensorBatch::<f64>::from_batch(&b);
        let noise = normals(8, &mut rng);
        assert_eq!(l.critic_targets(&tb, &noise, &[0, 1]), b.rewards);

        let mut g0 = small_cfg();
        g0.gamma = 0.0;
        let l0 = Learner::<f64>::new(g0, 3, 2, &mut RngStream::new(4, 0)).unwrap();
        b.terminals = vec![false; 4];
        let tb = TensorBatch::<f64>::from_batch(&b);
        assert_eq!(l0.critic_targets(&tb, &noise, &[2, 3]), b.rewards);
    }

    #[test]
    fn target_uses_minimum_of_subset() {
        let mut rng = RngStream::new(14, 0);
        let mut l = f64_learner(5);
        l.set_log_temperature(f64::NEG_INFINITY);
        for (i, t) in l.targets_mut().iter_mut().enumerate() {
            t.zero_output_layer();
            let n = t.params.len();
            t.params[n - 1] = i as f64;
        }
        let mut b = random_batch(3, &mut rng);
        b.rewards = vec![0.0; 3];
        b.terminals = vec![false; 3];
        let tb = TensorBatch::<f64>::from_batch(&b);
        let noise = normals(6, &mut rng);
        let y = l.critic_targets(&tb, &noise, &[2, 3]);
        for v in y {
            assert!((v - 0.99 * 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_subset_is_distinct() {
        let mut l = f64_learner(6);
        for _ in 0..200 {
            let s = l.sample_target_subset();
            assert_eq!(s.len(), 2);
            assert!(s[0] < s[1] && s[1] < 4);
        }
    }

    #[test]
    fn targets_are_permutation_covariant() {
        let mut rng = RngStream::new(15, 0);
        let l = f64_learner(7);
        let b = random_batch(5, &mut rng);
        let noise = normals(10, &mut rng);
        let y = l.critic_targets(&TensorBatch::from_batch(&b), &noise, &[0, 3]);
        let perm = [3, 0, 4, 1, 2];
        let mut pb = Batch::zeros(5, 3, 2);
        let mut pnoise = vec![0.0; 10];
        for (dst, &src) in perm.iter().enumerate() {
            pb.states[dst * 3..dst * 3 + 3].copy_from_slice(&b.states[src * 3..src * 3 + 3]);
            pb.next_states[dst * 3..dst * 3 + 3].copy_from_slice(&b.next_states[src * 3..src * 3 + 3]);
            pb.actions[dst * 2..dst * 2 + 2].copy_from_slice(&b.actions[src * 2..src * 2 + 2]);
            pb.rewards[dst] = b.rewards[src];
            pb.terminals[dst] = b.terminals[src];
            pnoise[dst * 2..dst * 2 + 2].copy_from_slice(&noise[src * 2..src * 2 + 2]);
        }
        let py = l.critic_targets(&TensorBatch::from_batch(&pb), &pnoise, &[0, 3]);
        for (dst, &src) in perm.iter().enumerate() {
            assert!((py[dst] - y[src]).abs() < 1e-12);
        }
    }

    #[test]
    fn polyak_extremes_and_midpoint() {
        for (tau, steps, expect) in [(0.0, 1, 0.0), (0.5, 2, 0.75), (1.0, 1, 1.0)] {
            let cfg = LearnerConfig { tau, ..small_cfg() };
            let mut l = Learner::<f64>::new(cfg, 3, 2, &mut RngStream::new(0, 0)).unwrap();
            l.critics_mut().iter_mut().for_each(|c| c.params.iter_mut().for_each(|p| *p = 1.0));
            l.targets_mut().iter_mut().for_each(|c| c.params.iter_mut().for_each(|p| *p = 0.0));
            for _ in 0..steps {
                l.polyak_update();
            }
            for t in l.targets() {
                assert!(t.params.iter().all(|&p| (p - expect).abs() < 1e-15), "tau {tau}");
            }
        }
    }

    #[test]
    fn temperature_rises_when_entropy_is_low() {
        let mut l = f64_learner(8);
        // log-probs above -target_entropy mean the policy is too certain.
        let (_, g) = l.temperature_grad(&[5.0, 4.0]);
        assert!(g < 0.0);
        let (_, g) = l.temperature_grad(&[-5.0, -4.0]);
        assert!(g > 0.0);
        let before = l.log_temperature();
        let mut rng = RngStream::new(16, 0);
        let b = random_batch(8, &mut rng);
        let tb = TensorBatch::<f64>::from_batch(&b);
        l.cfg.target_entropy = Some(50.0);
        l.update_actor_and_temperature(&tb).unwrap();
        assert!(l.log_temperature() > before);
    }

    #[test]
    fn frozen_temperature_stays_put() {
        let cfg = LearnerConfig {
            learnable_temperature: false,
            init_temperature: 0.2,
            ..small_cfg()
        };
        let mut l = Learner::<f64>::new(cfg, 3, 2, &mut RngStream::new(0, 0)).unwrap();
        let mut rng = RngStream::new(17, 0);
        let tb = TensorBatch::<f64>::from_batch(&random_batch(8, &mut rng));
        l.update_actor_and_temperature(&tb).unwrap();
        assert!((l.temperature() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn actor_updates_follow_schedule() {
        let cfg = LearnerConfig {
            actor_update_every: 3,
            ..small_cfg()
        };
        let mut l = Learner::<f32>::new(cfg, 3, 2, &mut RngStream::new(0, 0)).unwrap();
        let b = random_batch(8, &mut RngStream::new(18, 0));
        let fired: Vec<bool> = (0..7).map(|_| l.gradient_step(&b).unwrap().1.is_some()).collect();
        assert_eq!(fired, [false, false, true, false, false, true, false]);
        assert_eq!((l.critic_updates(), l.actor_updates()), (7, 2));
    }

    #[test]
    fn terminal_reward_one_converges() {
        let cfg = LearnerConfig {
            hidden: vec![32, 32],
            num_critics: 2,
            critic_lr: 1e-3,
            ..small_cfg()
        };
        let mut l = Learner::<f32>::new(cfg, 3, 2, &mut RngStream::new(21, 0)).unwrap();
        let mut rng = RngStream::new(22, 0);
        let mut b = random_batch(32, &mut rng);
        b.rewards = vec![1.0; 32];
        b.terminals = vec![true; 32];
        for _ in 0..2000 {
            l.gradient_step(&b).unwrap();
        }
        let tb = TensorBatch::<f32>::from_batch(&b);
        for c in l.critics() {
            for q in c.predict(&tb.state_actions, 32) {
                assert!((q - 1.0).abs() < 0.01, "{q}");
            }
        }
    }
}
