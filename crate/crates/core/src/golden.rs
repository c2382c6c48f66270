//! Reference call sequences for checking alternative front-ends against the
//! schedulers and environment in this crate.
//!
//! Each trace fixes a seed, drives one component through a scripted call
//! sequence, and records every output. Outcomes fed back into the schedulers
//! come from a separate stream so the trace depends only on `(seed, inputs)`.

use serde::Serialize;

use crate::demo::DemoDataset;
use crate::envs::{InitialStateLevel, PointMaze, ResettableEnv};
use crate::error::Result;
use crate::forward::{ForwardConfig, ForwardCurriculum};
use crate::reverse::{ReverseConfig, ReverseCurriculum, ReverseEvent};
use crate::rng::{streams, RngStream};

/// Stream for the scripted success outcomes fed to schedulers.
pub const OUTCOME_STREAM: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReverseCall {
    pub demo: usize,
    pub step: usize,
    pub offset: usize,
    pub timelimit: usize,
    pub success: bool,
    pub event: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForwardCall {
    pub index: usize,
    pub level_id: u64,
    pub success: bool,
    pub score: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvStep {
    pub action: [f64; 2],
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvTrace {
    pub level_id: u64,
    pub initial_state: Vec<f64>,
    pub steps: Vec<EnvStep>,
}

/// `calls` rounds of sample_start / record_episode. Frontier episodes
/// succeed with probability `p_success`; the trace stops early once every
/// demonstration is complete.
pub fn reverse_trace(
    cfg: ReverseConfig,
    demos: &DemoDataset,
    horizon: usize,
    seed: u64,
    calls: usize,
    p_success: f64,
) -> Result<Vec<ReverseCall>> {
    let mut sched = ReverseCurriculum::new(cfg, demos, horizon)?;
    let mut rng = RngStream::new(seed, streams::REVERSE);
    let mut outcomes = RngStream::new(seed, OUTCOME_STREAM);
    let mut out = Vec::with_capacity(calls);
    for _ in 0..calls {
        let Some(start) = sched.sample_start(&mut rng) else {
            break;
        };
        let success = outcomes.uniform() < p_success;
        let event = sched.record_episode(&start, success).map(|e| match e {
            ReverseEvent::Advanced { demo, start_step } => format!("advanced {demo} {start_step}"),
            ReverseEvent::Completed { demo } => format!("completed {demo}"),
        });
        out.push(ReverseCall {
            demo: start.demo,
            step: start.step,
            offset: start.offset,
            timelimit: start.timelimit,
            success,
            event,
        });
    }
    Ok(out)
}

/// `calls` rounds of sample_level / record_outcome over a pool built from the
/// same seed; the success probability of a level depends on its id only.
pub fn forward_trace(cfg: ForwardConfig, demo_starts: &[usize], seed: u64, calls: usize) -> Result<(Vec<ForwardCall>, Vec<u8>)> {
    let mut rng = RngStream::new(seed, streams::FORWARD);
    let mut fc = ForwardCurriculum::build_pool(cfg, demo_starts, &mut rng)?;
    let mut outcomes = RngStream::new(seed, OUTCOME_STREAM);
    let mut out = Vec::with_capacity(calls);
    for _ in 0..calls {
        let index = fc.sample_level(&mut rng)?;
        let level_id = fc.levels()[index].id();
        let p = (level_id % 4) as f64 / 3.0;
        let success = outcomes.uniform() < p;
        let score = fc.record_outcome(index, success)?;
        out.push(ForwardCall {
            index,
            level_id,
            success,
            score,
        });
    }
    Ok((out, fc.scores()))
}

/// Uniform random actions from the level resolved by `seed`.
pub fn env_trace(maze: &PointMaze, seed: u64, steps: usize) -> Result<EnvTrace> {
    let mut env = maze.clone();
    let level_id = RngStream::new(seed, streams::LEVELS).next_u64();
    let initial_state = env.reset_to_level(InitialStateLevel { level_id })?;
    let mut rng = RngStream::new(seed, streams::ROLLOUT);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let action = [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
        let s = env.step(&action)?;
        out.push(EnvStep {
            action,
            state: s.state,
            reward: s.reward,
            terminal: s.terminal,
            truncated: s.truncated,
        });
        if s.terminal || s.truncated {
            env.reset_to_level(InitialStateLevel { level_id })?;
        }
    }
    Ok(EnvTrace {
        level_id,
        initial_state,
        steps: out,
    })
}
