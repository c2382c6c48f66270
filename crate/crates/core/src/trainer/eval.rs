use std::fmt::Write as _;

use crate::demo::ActionScale;
use crate::envs::{Cell, EnvSnapshot, InitialStateLevel, PointMaze, ResettableEnv};
use crate::error::Result;
use crate::learner::Learner;
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum EvalStart {
    Level(InitialStateLevel),
    Snapshot(EnvSnapshot),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalResult {
    pub episodes: usize,
    pub successes: usize,
    pub env_steps: u64,
}

impl EvalResult {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            f64::NAN
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

/// Roll out `policy` from every start in lockstep until each episode ends.
///
/// `policy(states, n)` maps `n` row-major states to `n` unit-box actions.
/// A horizon override of 0 scores the spawn state without stepping.
pub fn evaluate_with<E, P>(
    proto: &E,
    starts: &[EvalStart],
    scale: &ActionScale,
    horizon: Option<usize>,
    mut policy: P,
) -> Result<EvalResult>
where
    E: ResettableEnv,
    P: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    let mut envs = Vec::with_capacity(starts.len());
    let mut obs = Vec::with_capacity(starts.len());
    for s in starts {
        let mut env = proto.clone();
        let o = match s {
            EvalStart::Level(l) => env.reset_to_level(*l)?,
            EvalStart::Snapshot(snap) => env.reset_to_snapshot(snap)?,
        };
        if let Some(h) = horizon {
            env.set_timelimit(h);
        }
        envs.push(env);
        obs.push(o);
    }
    let mut result = EvalResult {
        episodes: starts.len(),
        ..EvalResult::default()
    };
    if horizon == Some(0) {
        result.successes = envs.iter().filter(|e| e.is_success()).count();
        return Ok(result);
    }
    let sd = proto.state_dim();
    let ad = proto.action_dim();
    let mut live: Vec<usize> = (0..envs.len()).collect();
    while !live.is_empty() {
        let mut states = Vec::with_capacity(live.len() * sd);
        for &i in &live {
            states.extend_from_slice(&obs[i]);
        }
        let actions = policy(&states, live.len())?;
        let mut still = Vec::with_capacity(live.len());
        for (k, &i) in live.iter().enumerate() {
            let a = scale.to_env(&actions[k * ad..(k + 1) * ad]);
            let out = envs[i].step(&a)?;
            result.env_steps += 1;
            if out.terminal {
                result.successes += 1;
            } else if !out.truncated {
                still.push(i);
            }
            obs[i] = out.state;
        }
        live = still;
    }
    Ok(result)
}

/// Deterministic-policy evaluation.
pub fn evaluate<T: Scalar, E: ResettableEnv>(
    learner: &Learner<T>,
    proto: &E,
    starts: &[EvalStart],
    scale: &ActionScale,
    horizon: Option<usize>,
) -> Result<EvalResult> {
    // Deterministic acting never draws from this stream.
    let mut unused = RngStream::new(0, 0);
    evaluate_with(proto, starts, scale, horizon, |s, n| {
        learner.act_batch(s, n, true, &mut unused)
    })
}

/// `count` starts from the initial-state distribution, identical on every call
/// with the same `rng` state.
pub fn level_starts(count: usize, rng: &mut RngStream) -> Vec<EvalStart> {
    (0..count)
        .map(|_| {
            EvalStart::Level(InitialStateLevel {
                level_id: rng.next_u64(),
            })
        })
        .collect()
}

/// Per-cell success rates; `None` marks walls.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    pub rates: Vec<Option<f64>>,
}

impl Heatmap {
    pub fn get(&self, (r, c): Cell) -> Option<f64> {
        self.rates[r * self.cols + c]
    }

    /// One line per maze row, walls as `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols)
                .map(|c| match self.get((r, c)) {
                    Some(v) => format!("{v:.6}"),
                    None => "NaN".to_string(),
                })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Plain greyscale graymap: success 0 is black, 1 is white, walls black.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.cols, self.rows);
        for r in 0..self.rows {
            let line: Vec<String> = (0..self.cols)
                .map(|c| {
                    let v = self.get((r, c)).unwrap_or(0.0);
                    format!("{}", (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                })
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

/// Success rate from `episodes_per_cell` uniform positions inside every free cell.
pub fn heatmap_with<P>(
    maze: &PointMaze,
    episodes_per_cell: usize,
    scale: &ActionScale,
    rng: &mut RngStream,
    policy: P,
) -> Result<Heatmap>
where
    P: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    let grid = maze.grid();
    let (rows, cols) = (grid.rows, grid.cols);
    let mut starts = Vec::new();
    let mut cells = Vec::new();
    let mut probe = maze.clone();
    for r in 0..rows {
        for c in 0..cols {
            if grid.is_wall((r, c)) {
                continue;
            }
            cells.push((r, c));
            for _ in 0..episodes_per_cell {
                probe.reset_to_position(maze.sample_in_cell((r, c), rng))?;
                starts.push(EvalStart::Snapshot(probe.snapshot()));
            }
        }
    }
    let mut policy = policy;
    let mut rates = vec![None; rows * cols];
    for (k, &(r, c)) in cells.iter().enumerate() {
        let chunk = &starts[k * episodes_per_cell..(k + 1) * episodes_per_cell];
        let res = evaluate_with(maze, chunk, scale, None, &mut policy)?;
        rates[r * cols + c] = Some(res.success_rate());
    }
    Ok(Heatmap { rows, cols, rates })
}

pub fn heatmap<T: Scalar>(
    learner: &Learner<T>,
    maze: &PointMaze,
    episodes_per_cell: usize,
    scale: &ActionScale,
    rng: &mut RngStream,
) -> Result<Heatmap> {
    let mut unused = RngStream::new(0, 0);
    heatmap_with(maze, episodes_per_cell, scale, rng, |s, n| {
        learner.act_batch(s, n, true, &mut unused)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_demo, DemoGenConfig, MazeSpec};

    fn maze() -> PointMaze {
        PointMaze::new(MazeSpec::default()).unwrap()
    }

    fn random_policy(rng: &mut RngStream) -> impl FnMut(&[f64], usize) -> Result<Vec<f64>> + '_ {
        move |_, n| Ok((0..2 * n).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
    }

    #[test]
    fn scripted_actions_replayed_succeed() {
        let m = maze();
        let demo = generate_demo(&m, (0, 0), &DemoGenConfig::default(), &mut RngStream::new(1, 1)).unwrap();
        let mut t = 0;
        let res = evaluate_with(
            &m,
            &[EvalStart::Snapshot(demo.snapshots[0].clone())],
            &ActionScale::identity(2),
            None,
            |_, _| {
                t += 1;
                Ok(demo.actions[t - 1].clone())
            },
        )
        .unwrap();
        assert_eq!(res.success_rate(), 1.0);
        assert_eq!(res.env_steps, demo.len() as u64);
    }

    #[test]
    fn zero_horizon_scores_spawn_state() {
        let mut m = maze();
        m.reset_to_position(m.goal_center()).unwrap();
        let at_goal = EvalStart::Snapshot(m.snapshot());
        m.reset_to_position(m.cell_center((0, 0))).unwrap();
        let far = EvalStart::Snapshot(m.snapshot());
        let res = evaluate_with(&m, &[at_goal, far], &ActionScale::identity(2), Some(0), |_, _| {
            panic!("no steps at horizon 0")
        })
        .unwrap();
        assert_eq!((res.successes, res.env_steps), (1, 0));
    }

    #[test]
    fn random_policy_rarely_succeeds() {
        let m = maze();
        let starts = level_starts(100, &mut RngStream::new(0, 3));
        let mut rng = RngStream::new(0, 2);
        let res = evaluate_with(&m, &starts, &ActionScale::identity(2), None, random_policy(&mut rng)).unwrap();
        assert!(res.success_rate() <= 0.05, "{}", res.success_rate());
    }

    #[test]
    fn heatmap_marks_walls_and_is_reproducible() {
        let m = maze();
        let run = || {
            let mut prng = RngStream::new(5, 5);
            heatmap_with(&m, 3, &ActionScale::identity(2), &mut RngStream::new(1, 1), random_policy(&mut prng)).unwrap()
        };
        let h = run();
        assert_eq!((h.rows, h.cols), (8, 8));
        assert_eq!(h.get((2, 0)), None);
        assert!(h.get((0, 0)).is_some());
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.lines().nth(2).unwrap().starts_with("NaN,NaN,NaN,NaN,"));
        assert_eq!(csv, run().to_csv());
        let pgm = h.to_pgm();
        assert!(pgm.starts_with("P2\n8 8\n255\n"));
        assert_eq!(pgm.lines().count(), 3 + 8);
    }
}
