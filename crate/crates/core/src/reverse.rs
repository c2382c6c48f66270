//! Stage-1 start-state schedulers over demonstration states.
//!
//! [`ReverseCurriculum`] keeps one frontier `t_i` per successful
//! demonstration and walks it backwards by `delta` steps after `m`
//! consecutive successes from the frontier itself. [`UniformReset`] and
//! [`GlobalReverse`] are the ablation baselines.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::demo::DemoDataset;
use crate::envs::EnvSnapshot;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReverseConfig {
    /// Reverse step size.
    pub delta: usize,
    /// Consecutive frontier successes required to advance.
    pub m: usize,
    /// Demonstration-length to episode-horizon ratio.
    pub phi: f64,
    /// Success probability of the geometric offset distribution.
    pub p_geom: f64,
    pub dynamic_timelimit: bool,
    /// Episodes in the success window of the global variant.
    pub global_window: usize,
    pub global_threshold: f64,
}

impl Default for ReverseConfig {
    fn default() -> Self {
        Self {
            delta: 4,
            m: 3,
            phi: 3.0,
            p_geom: 0.5,
            dynamic_timelimit: true,
            global_window: 20,
            global_threshold: 0.9,
        }
    }
}

impl ReverseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 {
            return Err(Error::config("reverse.delta", "must be at least 1"));
        }
        if self.m == 0 {
            return Err(Error::config("reverse.m", "must be at least 1"));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::config("reverse.phi", "must be positive"));
        }
        if !(self.p_geom > 0.0 && self.p_geom <= 1.0) {
            return Err(Error::config("reverse.p_geom", "must lie in (0, 1]"));
        }
        if self.global_window == 0 {
            return Err(Error::config("reverse.global_window", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.global_threshold) {
            return Err(Error::config("reverse.global_threshold", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Episode start drawn by a stage-1 scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReverseStart {
    /// Index into the demo dataset.
    pub demo: usize,
    /// Demonstration step to reset to (`t + k`).
    pub step: usize,
    pub offset: usize,
    pub timelimit: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReverseEvent {
    Advanced { demo: usize, start_step: usize },
    Completed { demo: usize },
}

/// `1 + ceil((demo_len - step) / phi)`.
pub fn dynamic_timelimit(demo_len: usize, step: usize, phi: f64) -> usize {
    let remaining = demo_len.saturating_sub(step) as f64;
    1 + (remaining / phi).ceil() as usize
}

/// Geometric offset on `{0, ..., max}` with `P(k) ∝ p (1-p)^k`, drawn by
/// inverting the truncated CDF.
pub fn sample_truncated_geometric(p: f64, max: usize, rng: &mut RngStream) -> usize {
    if p >= 1.0 || max == 0 {
        return 0;
    }
    let q = 1.0 - p;
    let mass = 1.0 - q.powi(max as i32 + 1);
    let u = rng.uniform() * mass;
    let k = ((1.0 - u).ln() / q.ln()).floor();
    (k.max(0.0) as usize).min(max)
}

pub fn truncated_geometric_pmf(p: f64, max: usize, k: usize) -> f64 {
    if k > max {
        return 0.0;
    }
    let q = 1.0 - p;
    p * q.powi(k as i32) / (1.0 - q.powi(max as i32 + 1))
}

/// Snapshot to reset to for `start`.
pub fn resolve_reset(demos: &DemoDataset, demo: usize, step: usize) -> Result<&EnvSnapshot> {
    let traj = demos.trajectories.get(demo).ok_or(Error::OutOfRange {
        what: "demo",
        index: demo,
        len: demos.len(),
    })?;
    traj.snapshots.get(step).ok_or(Error::OutOfRange {
        what: "demo step",
        index: step,
        len: traj.snapshots.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoProgress {
    pub demo: usize,
    pub length: usize,
    pub start: usize,
    pub history: VecDeque<bool>,
    pub complete: bool,
}

/// Per-demonstration reverse curriculum.
#[derive(Clone, Debug, PartialEq)]
pub struct ReverseCurriculum {
    cfg: ReverseConfig,
    horizon: usize,
    demos: Vec<DemoProgress>,
}

impl ReverseCurriculum {
    /// Frontiers start at the final state of every successful demonstration.
    pub fn new(cfg: ReverseConfig, demos: &DemoDataset, horizon: usize) -> Result<Self> {
        cfg.validate()?;
        let lengths: Vec<(usize, usize)> = demos
            .successful()
            .into_iter()
            .map(|i| (i, demos.trajectories[i].len()))
            .collect();
        Self::from_lengths(cfg, &lengths, horizon)
    }

    /// `(dataset index, length)` for each participating demonstration.
    pub fn from_lengths(cfg: ReverseConfig, lengths: &[(usize, usize)], horizon: usize) -> Result<Self> {
        cfg.validate()?;
        if lengths.is_empty() {
            return Err(Error::NoSuccessfulDemos);
        }
        Ok(Self {
            cfg,
            horizon,
            demos: lengths
                .iter()
                .map(|&(demo, length)| DemoProgress {
                    demo,
                    length,
                    start: length,
                    history: VecDeque::new(),
                    complete: false,
                })
                .collect(),
        })
    }

    pub fn config(&self) -> &ReverseConfig {
        &self.cfg
    }

    pub fn demos(&self) -> &[DemoProgress] {
        &self.demos
    }

    pub fn is_finished(&self) -> bool {
        self.demos.iter().all(|d| d.complete)
    }

    /// `sum t_i / sum T_i`, 1 at the start and 0 once every frontier is at 0.
    pub fn progress(&self) -> f64 {
        let t: usize = self.demos.iter().map(|d| d.start).sum();
        let total: usize = self.demos.iter().map(|d| d.length).sum();
        if total == 0 {
            0.0
        } else {
            t as f64 / total as f64
        }
    }

    /// Demo selection probabilities, aligned with [`demos`](Self::demos).
    ///
    /// Weights `t_i / T_i` over incomplete demos, normalized; uniform over the
    /// incomplete ones when every weight is zero.
    pub fn demo_probabilities(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self
            .demos
            .iter()
            .map(|d| {
                if d.complete || d.length == 0 {
                    0.0
                } else {
                    d.start as f64 / d.length as f64
                }
            })
            .collect();
        let mut total: f64 = w.iter().sum();
        if total <= 0.0 {
            w = self.demos.iter().map(|d| if d.complete { 0.0 } else { 1.0 }).collect();
            total = w.iter().sum();
        }
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
        }
        w
    }

    /// `None` once every demonstration is complete.
    pub fn sample_start(&self, rng: &mut RngStream) -> Option<ReverseStart> {
        let probs = self.demo_probabilities();
        let slot = rng.weighted_index(&probs)?;
        let d = &self.demos[slot];
        let offset = sample_truncated_geometric(self.cfg.p_geom, d.length - d.start, rng);
        let step = d.start + offset;
        Some(ReverseStart {
            demo: d.demo,
            step,
            offset,
            timelimit: self.timelimit(d.length, step),
        })
    }

    fn timelimit(&self, length: usize, step: usize) -> usize {
        if self.cfg.dynamic_timelimit {
            dynamic_timelimit(length, step, self.cfg.phi)
        } else {
            self.horizon
        }
    }

    /// Record an episode outcome. Only frontier episodes (`offset == 0`,
    /// started from the current `t_i`) touch the history.
    pub fn record_episode(&mut self, start: &ReverseStart, success: bool) -> Option<ReverseEvent> {
        let m = self.cfg.m;
        let delta = self.cfg.delta;
        let Some(d) = self.demos.iter_mut().find(|d| d.demo == start.demo) else {
            log::warn!("episode recorded for unknown demo {}", start.demo);
            return None;
        };
        if d.complete {
            log::warn!("episode recorded for completed demo {}; ignored", start.demo);
            return None;
        }
        if start.offset != 0 || start.step != d.start {
            return None;
        }
        d.history.push_back(success);
        while d.history.len() > m {
            d.history.pop_front();
        }
        if d.history.len() < m || !d.history.iter().all(|&s| s) {
            return None;
        }
        d.history.clear();
        if d.start == 0 {
            d.complete = true;
            Some(ReverseEvent::Completed { demo: d.demo })
        } else {
            d.start -= delta.min(d.start);
            Some(ReverseEvent::Advanced {
                demo: d.demo,
                start_step: d.start,
            })
        }
    }
}

/// Uniform demo, uniform step, full horizon.
#[derive(Clone, Debug)]
pub struct UniformReset {
    lengths: Vec<(usize, usize)>,
    horizon: usize,
}

impl UniformReset {
    pub fn new(demos: &DemoDataset, horizon: usize) -> Result<Self> {
        let lengths: Vec<_> = demos
            .successful()
            .into_iter()
            .map(|i| (i, demos.trajectories[i].len()))
            .collect();
        if lengths.is_empty() {
            return Err(Error::NoSuccessfulDemos);
        }
        Ok(Self { lengths, horizon })
    }

    pub fn sample_start(&self, rng: &mut RngStream) -> ReverseStart {
        let (demo, len) = self.lengths[rng.index(self.lengths.len())];
        ReverseStart {
            demo,
            step: rng.index(len + 1),
            offset: 0,
            timelimit: self.horizon,
        }
    }
}

/// One shared offset `u` from the end of every demonstration.
#[derive(Clone, Debug)]
pub struct GlobalReverse {
    cfg: ReverseConfig,
    lengths: Vec<(usize, usize)>,
    horizon: usize,
    offset: usize,
    window: VecDeque<bool>,
    finished: bool,
}

impl GlobalReverse {
    pub fn new(cfg: ReverseConfig, demos: &DemoDataset, horizon: usize) -> Result<Self> {
        cfg.validate()?;
        let lengths: Vec<_> = demos
            .successful()
            .into_iter()
            .map(|i| (i, demos.trajectories[i].len()))
            .collect();
        if lengths.is_empty() {
            return Err(Error::NoSuccessfulDemos);
        }
        Ok(Self {
            cfg,
            lengths,
            horizon,
            offset: 0,
            window: VecDeque::new(),
            finished: false,
        })
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn progress(&self) -> f64 {
        let t: usize = self.lengths.iter().map(|&(_, l)| l.saturating_sub(self.offset)).sum();
        let total: usize = self.lengths.iter().map(|&(_, l)| l).sum();
        t as f64 / total.max(1) as f64
    }

    pub fn sample_start(&self, rng: &mut RngStream) -> ReverseStart {
        let (demo, len) = self.lengths[rng.index(self.lengths.len())];
        let base = len.saturating_sub(self.offset);
        let offset = sample_truncated_geometric(self.cfg.p_geom, len - base, rng);
        let step = base + offset;
        let timelimit = if self.cfg.dynamic_timelimit {
            dynamic_timelimit(len, step, self.cfg.phi)
        } else {
            self.horizon
        };
        ReverseStart {
            demo,
            step,
            offset,
            timelimit,
        }
    }

    /// Every episode counts, whatever its offset.
    pub fn record_episode(&mut self, success: bool) -> Option<ReverseEvent> {
        if self.finished {
            return None;
        }
        self.window.push_back(success);
        while self.window.len() > self.cfg.global_window {
            self.window.pop_front();
        }
        if self.window.len() < self.cfg.global_window {
            return None;
        }
        let rate = self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64;
        if rate <= self.cfg.global_threshold {
            return None;
        }
        self.window.clear();
        let longest = self.lengths.iter().map(|&(_, l)| l).max().unwrap_or(0);
        if self.offset >= longest {
            self.finished = true;
            return Some(ReverseEvent::Completed { demo: usize::MAX });
        }
        self.offset += self.cfg.delta;
        Some(ReverseEvent::Advanced {
            demo: usize::MAX,
            start_step: longest.saturating_sub(self.offset),
        })
    }
}

/// Stage-1 scheduler variants compared in the reverse-curriculum ablation.
#[derive(Clone, Debug)]
pub enum StartScheduler {
    PerDemo(ReverseCurriculum),
    Uniform(UniformReset),
    Global(GlobalReverse),
}

impl StartScheduler {
    pub fn sample_start(&self, rng: &mut RngStream) -> Option<ReverseStart> {
        match self {
            StartScheduler::PerDemo(s) => s.sample_start(rng),
            StartScheduler::Uniform(s) => Some(s.sample_start(rng)),
            StartScheduler::Global(s) => (!s.is_finished()).then(|| s.sample_start(rng)),
        }
    }

    pub fn record_episode(&mut self, start: &ReverseStart, success: bool) -> Option<ReverseEvent> {
        match self {
            StartScheduler::PerDemo(s) => s.record_episode(start, success),
            StartScheduler::Uniform(_) => None,
            StartScheduler::Global(s) => s.record_episode(success),
        }
    }

    pub fn is_finished(&self) -> bool {
        match self {
            StartScheduler::PerDemo(s) => s.is_finished(),
            StartScheduler::Uniform(_) => false,
            StartScheduler::Global(s) => s.is_finished(),
        }
    }

    pub fn progress(&self) -> f64 {
        match self {
            StartScheduler::PerDemo(s) => s.progress(),
            StartScheduler::Uniform(_) => 1.0,
            StartScheduler::Global(s) => s.progress(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(lengths: &[usize]) -> ReverseCurriculum {
        let l: Vec<_> = lengths.iter().copied().enumerate().collect();
        ReverseCurriculum::from_lengths(ReverseConfig::default(), &l, 100).unwrap()
    }

    fn frontier(s: &ReverseCurriculum, slot: usize) -> ReverseStart {
        let d = &s.demos[slot];
        ReverseStart {
            demo: d.demo,
            step: d.start,
            offset: 0,
            timelimit: 1,
        }
    }

    #[test]
    fn demo_probabilities_normalize_progress() {
        let mut s = sched(&[100, 100]);
        s.demos[0].start = 60;
        s.demos[1].start = 30;
        let p = s.demo_probabilities();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fresh_schedule_is_uniform() {
        let s = sched(&[50, 80, 120]);
        for p in s.demo_probabilities() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_frontiers_fall_back_to_uniform_over_incomplete() {
        let mut s = sched(&[10, 10, 10]);
        for d in &mut s.demos {
            d.start = 0;
        }
        s.demos[1].complete = true;
        assert_eq!(s.demo_probabilities(), vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn timelimit_formula() {
        assert_eq!(dynamic_timelimit(90, 30, 3.0), 21);
        assert_eq!(dynamic_timelimit(90, 90, 3.0), 1);
        assert_eq!(dynamic_timelimit(10, 9, 3.0), 2);
    }

    #[test]
    fn geometric_pmf_untruncated_values() {
        // With a huge support the truncation mass is 1 to double precision.
        assert!((truncated_geometric_pmf(0.5, 200, 0) - 0.5).abs() < 1e-15);
        assert!((truncated_geometric_pmf(0.5, 200, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn geometric_sampler_matches_pmf() {
        let mut rng = RngStream::new(9, 0);
        let max = 3;
        let n = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_truncated_geometric(0.5, max, &mut rng)] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let p = truncated_geometric_pmf(0.5, max, k);
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n as f64 * p).abs() < 5.0 * sd, "k={k}: {c}");
        }
    }

    #[test]
    fn three_successes_advance_by_delta() {
        let mut s = sched(&[20]);
        for i in 0..3 {
            let ev = s.record_episode(&frontier(&s, 0), true);
            assert_eq!(ev.is_some(), i == 2);
        }
        assert_eq!(s.demos[0].start, 16);
        assert!(s.demos[0].history.is_empty());
    }

    #[test]
    fn advancement_clamps_at_zero() {
        let mut s = sched(&[2]);
        for _ in 0..3 {
            s.record_episode(&frontier(&s, 0), true);
        }
        assert_eq!(s.demos[0].start, 0);
        assert!(!s.demos[0].complete);
        for _ in 0..3 {
            s.record_episode(&frontier(&s, 0), true);
        }
        assert!(s.demos[0].complete);
        assert!(s.is_finished());
        assert!(s.sample_start(&mut RngStream::new(0, 0)).is_none());
    }

    #[test]
    fn failure_breaks_the_run() {
        let mut s = sched(&[20]);
        for ok in [true, true, false] {
            assert!(s.record_episode(&frontier(&s, 0), ok).is_none());
        }
        assert_eq!(s.demos[0].start, 20);
        assert!(s.record_episode(&frontier(&s, 0), true).is_none());
        assert!(s.record_episode(&frontier(&s, 0), true).is_none());
        assert!(s.record_episode(&frontier(&s, 0), true).is_some());
    }

    #[test]
    fn offset_episodes_do_not_count() {
        let mut s = sched(&[20]);
        s.demos[0].start = 12;
        let mut st = frontier(&s, 0);
        st.offset = 2;
        st.step = 14;
        for _ in 0..10 {
            assert!(s.record_episode(&st, true).is_none());
        }
        assert!(s.demos[0].history.is_empty());
    }

    #[test]
    fn completed_demo_is_ignored() {
        let mut s = sched(&[0]);
        for _ in 0..3 {
            s.record_episode(&frontier(&s, 0), true);
        }
        assert!(s.is_finished());
        let before = s.clone();
        assert!(s.record_episode(&frontier(&before, 0), true).is_none());
        assert_eq!(s, before);
    }

    #[test]
    fn resolve_reset_bounds() {
        let ds = crate::demo::tests_support::toy_dataset(1, 5, 2);
        assert_eq!(resolve_reset(&ds, 0, 0).unwrap(), &ds.trajectories[0].snapshots[0]);
        assert_eq!(resolve_reset(&ds, 0, 5).unwrap(), &ds.trajectories[0].snapshots[5]);
        assert!(resolve_reset(&ds, 0, 6).is_err());
        assert!(resolve_reset(&ds, 1, 0).is_err());
    }

    #[test]
    fn uniform_variant_full_horizon() {
        let ds = crate::demo::tests_support::toy_dataset(2, 10, 2);
        let u = UniformReset::new(&ds, 100).unwrap();
        let mut rng = RngStream::new(4, 0);
        let mut per_demo = [0usize; 2];
        let mut per_step = [0usize; 11];
        for _ in 0..10_000 {
            let s = u.sample_start(&mut rng);
            assert_eq!(s.timelimit, 100);
            per_demo[s.demo] += 1;
            per_step[s.step] += 1;
        }
        assert!(per_demo.iter().all(|&c| (4800..=5200).contains(&c)), "{per_demo:?}");
        assert!(per_step.iter().all(|&c| (c as f64 - 10_000.0 / 11.0).abs() < 120.0), "{per_step:?}");
    }

    #[test]
    fn global_variant_advances_on_window() {
        let ds = crate::demo::tests_support::toy_dataset(2, 10, 2);
        let cfg = ReverseConfig {
            global_window: 10,
            ..ReverseConfig::default()
        };
        let mut g = GlobalReverse::new(cfg, &ds, 100).unwrap();
        let mut rng = RngStream::new(0, 0);
        let s = g.sample_start(&mut rng);
        assert_eq!(s.step, 10);
        for i in 0..10 {
            assert_eq!(g.record_episode(true).is_some(), i == 9);
        }
        assert_eq!(g.offset(), 4);
    }

    #[test]
    fn global_variant_clamps_short_demos() {
        let mut ds = crate::demo::tests_support::toy_dataset(2, 10, 2);
        ds.trajectories[1] = crate::demo::tests_support::toy_dataset(1, 3, 2).trajectories[0].clone();
        let cfg = ReverseConfig {
            global_window: 1,
            p_geom: 1.0,
            ..ReverseConfig::default()
        };
        let mut g = GlobalReverse::new(cfg, &ds, 100).unwrap();
        g.record_episode(true);
        g.record_episode(true);
        assert_eq!(g.offset(), 8);
        let mut rng = RngStream::new(1, 0);
        for _ in 0..50 {
            let s = g.sample_start(&mut rng);
            if s.demo == 1 {
                assert_eq!(s.step, 0);
            } else {
                assert_eq!(s.step, 2);
            }
        }
    }
}
