//! Stage-2 forward curriculum over initial states.
//!
//! Each level keeps a window of the last `k` binary outcomes (did the
//! episode earn any reward). The window fraction `q` maps to a priority
//! class: `q = 0` scores 2, `0 < q < omega` scores 3, `q >= omega` scores 1.
//! Levels are drawn from a convex mix of a rank-based score distribution and
//! a staleness distribution.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::envs::InitialStateLevel;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const INITIAL_SCORE: u8 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    /// Number of levels sampled from the initial-state distribution.
    pub n: usize,
    /// Outcome window per level.
    pub k: usize,
    /// Success threshold.
    pub omega: f64,
    /// Rank temperature.
    pub beta: f64,
    /// Weight of the staleness distribution.
    pub staleness: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            k: 5,
            omega: 0.75,
            beta: 0.1,
            staleness: 0.1,
        }
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("forward.n", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::config("forward.k", "must be at least 1"));
        }
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::config("forward.omega", "must lie in (0, 1)"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("forward.beta", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.staleness) {
            return Err(Error::config("forward.staleness", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Where a pool entry resets the environment to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolLevel {
    Seeded(InitialStateLevel),
    /// Initial state of demonstration `demo` (dataset index).
    DemoStart { demo: usize },
}

impl PoolLevel {
    /// Identifier for dumps: the seed, or `u64::MAX - demo` for demo starts.
    pub fn id(&self) -> u64 {
        match self {
            PoolLevel::Seeded(l) => l.level_id,
            PoolLevel::DemoStart { demo } => u64::MAX - *demo as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelStats {
    pub history: VecDeque<bool>,
    pub score: u8,
    pub last_sampled: u64,
}

/// Score class from an outcome window; `None` for an empty window.
pub fn score_from_history(history: &[bool], omega: f64) -> Option<u8> {
    if history.is_empty() {
        return None;
    }
    let q = history.iter().filter(|&&s| s).count() as f64 / history.len() as f64;
    Some(if q == 0.0 {
        2
    } else if q < omega {
        3
    } else {
        1
    })
}

/// Fractional ranks, rank 1 for the highest score; ties share the mean of
/// the ranks they occupy.
pub fn fractional_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Positions i..=j hold ranks i+1..=j+1.
        let mean = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// `rank(S_i)^(-1/beta)`, normalized.
pub fn score_distribution(scores: &[f64], beta: f64) -> Vec<f64> {
    let ranks = fractional_ranks(scores);
    // Divide by the smallest rank before powering to stay in range.
    let min_rank = ranks.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = ranks.iter().map(|r| (r / min_rank).powf(-1.0 / beta)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// `(c - C_i) / sum_j (c - C_j)`, uniform when every gap is zero.
pub fn staleness_distribution(episodes: u64, last_sampled: &[u64]) -> Vec<f64> {
    let gaps: Vec<f64> = last_sampled
        .iter()
        .map(|&c| episodes.saturating_sub(c) as f64)
        .collect();
    let total: f64 = gaps.iter().sum();
    if total <= 0.0 {
        let n = last_sampled.len().max(1) as f64;
        return vec![1.0 / n; last_sampled.len()];
    }
    gaps.into_iter().map(|g| g / total).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCurriculum {
    cfg: ForwardConfig,
    levels: Vec<PoolLevel>,
    stats: Vec<LevelStats>,
    episodes: u64,
}

impl ForwardCurriculum {
    /// `n` seeded levels followed by one level per demonstration start.
    pub fn build_pool(cfg: ForwardConfig, demo_starts: &[usize], rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let mut levels: Vec<PoolLevel> = (0..cfg.n)
            .map(|_| {
                PoolLevel::Seeded(InitialStateLevel {
                    level_id: rng.next_u64(),
                })
            })
            .collect();
        levels.extend(demo_starts.iter().map(|&demo| PoolLevel::DemoStart { demo }));
        Ok(Self::from_levels(cfg, levels))
    }

    pub fn from_levels(cfg: ForwardConfig, levels: Vec<PoolLevel>) -> Self {
        let stats = levels
            .iter()
            .map(|_| LevelStats {
                history: VecDeque::new(),
                score: INITIAL_SCORE,
                last_sampled: 0,
            })
            .collect();
        Self {
            cfg,
            levels,
            stats,
            episodes: 0,
        }
    }

    pub fn config(&self) -> &ForwardConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[PoolLevel] {
        &self.levels
    }

    pub fn stats(&self) -> &[LevelStats] {
        &self.stats
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn scores(&self) -> Vec<u8> {
        self.stats.iter().map(|s| s.score).collect()
    }

    pub fn mean_score(&self) -> f64 {
        let n = self.stats.len().max(1) as f64;
        self.stats.iter().map(|s| s.score as f64).sum::<f64>() / n
    }

    /// Fraction of successes in a level's window, if it has any outcomes.
    pub fn q(&self, index: usize) -> Option<f64> {
        let h = &self.stats.get(index)?.history;
        (!h.is_empty()).then(|| h.iter().filter(|&&s| s).count() as f64 / h.len() as f64)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let scores: Vec<f64> = self.stats.iter().map(|s| s.score as f64).collect();
        let last: Vec<u64> = self.stats.iter().map(|s| s.last_sampled).collect();
        let ps = score_distribution(&scores, self.cfg.beta);
        let pc = staleness_distribution(self.episodes, &last);
        let cs = self.cfg.staleness;
        ps.iter().zip(&pc).map(|(s, c)| (1.0 - cs) * s + cs * c).collect()
    }

    /// Draw a pool index and stamp it with the current episode count.
    pub fn sample_level(&mut self, rng: &mut RngStream) -> Result<usize> {
        if self.levels.is_empty() {
            return Err(Error::EmptyPool);
        }
        let p = self.probabilities();
        let i = rng.weighted_index(&p).ok_or(Error::EmptyPool)?;
        self.stats[i].last_sampled = self.episodes;
        Ok(i)
    }

    /// Append an outcome, rescore the level and count the episode.
    pub fn record_outcome(&mut self, index: usize, nonzero_return: bool) -> Result<u8> {
        let k = self.cfg.k;
        let omega = self.cfg.omega;
        let len = self.stats.len();
        let s = self.stats.get_mut(index).ok_or(Error::OutOfRange {
            what: "level",
            index,
            len,
        })?;
        s.history.push_back(nonzero_return);
        while s.history.len() > k {
            s.history.pop_front();
        }
        s.score = score_from_history(s.history.make_contiguous(), omega).unwrap_or(INITIAL_SCORE);
        self.episodes += 1;
        Ok(s.score)
    }

    /// Histogram of scores `[count(1), count(2), count(3)]`.
    pub fn score_histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for s in &self.stats {
            h[(s.score - 1) as usize] += 1;
        }
        h
    }
}
