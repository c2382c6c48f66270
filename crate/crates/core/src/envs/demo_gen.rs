//! Scripted demonstrations: proportional control along the BFS cell path.

use serde::{Deserialize, Serialize};

use super::maze::{Cell, PointMaze};
use super::ResettableEnv;
use crate::demo::{DemoDataset, DemoTrajectory};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoGenConfig {
    /// Proportional gain, in action units per world unit.
    pub kp: f64,
    /// Standard deviation of Gaussian noise added to each action.
    pub noise_sigma: f64,
    /// Advance to the next waypoint once within this distance (cell units).
    pub switch_radius: f64,
}

impl Default for DemoGenConfig {
    fn default() -> Self {
        Self {
            kp: 2.5,
            noise_sigma: 0.05,
            switch_radius: 0.35,
        }
    }
}

/// Waypoints (cell centers after the start cell, ending at the goal center)
/// and the step count a saturated controller needs to follow them. Each axis
/// moves independently, so segment cost is the Chebyshev distance.
pub fn waypoints(maze: &PointMaze, start: [f64; 2], start_cell: Cell) -> Result<(Vec<[f64; 2]>, usize)> {
    let path = maze
        .grid()
        .shortest_path(start_cell)
        .ok_or_else(|| Error::DemoGeneration(format!("cell {start_cell:?} cannot reach the goal")))?;
    let pts: Vec<[f64; 2]> = path.iter().skip(1).map(|&c| maze.cell_center(c)).collect();
    let mut length = 0.0;
    let mut prev = start;
    for p in pts.iter().chain(std::iter::once(&maze.goal_center())) {
        length += (p[0] - prev[0]).abs().max((p[1] - prev[1]).abs());
        prev = *p;
    }
    let spec = maze.spec();
    let bound = ((length - spec.goal_radius).max(0.0) / spec.max_step_displacement).ceil() as usize;
    let pts = if pts.is_empty() { vec![maze.goal_center()] } else { pts };
    Ok((pts, bound.max(1)))
}

/// Roll out the scripted controller from the center of `start_cell`.
pub fn generate_demo(
    maze: &PointMaze,
    start_cell: Cell,
    cfg: &DemoGenConfig,
    rng: &mut RngStream,
) -> Result<DemoTrajectory> {
    if start_cell.0 >= maze.grid().rows
        || start_cell.1 >= maze.grid().cols
        || maze.grid().is_wall(start_cell)
    {
        return Err(Error::DemoGeneration(format!(
            "start cell {start_cell:?} is not a free cell"
        )));
    }
    let mut env = maze.clone();
    let start = maze.cell_center(start_cell);
    let (points, bound) = waypoints(maze, start, start_cell)?;
    let max_steps = 4 * bound;
    env.reset_to_position(start)?;
    env.set_timelimit(max_steps);

    let switch = cfg.switch_radius * maze.spec().cell_size;
    let mut states = vec![env.observe()];
    let mut snapshots = vec![env.snapshot()];
    let mut actions = Vec::new();
    let mut target = 0;
    let mut success = false;
    while actions.len() < max_steps {
        let p = env.position();
        while target + 1 < points.len() && dist(p, points[target]) < switch {
            target += 1;
        }
        let w = points[target];
        let a: Vec<f64> = (0..2)
            .map(|d| {
                let noise = if cfg.noise_sigma > 0.0 {
                    cfg.noise_sigma * rng.normal()
                } else {
                    0.0
                };
                (cfg.kp * (w[d] - p[d]) + noise).clamp(-1.0, 1.0)
            })
            .collect();
        let out = env.step(&a)?;
        actions.push(a);
        states.push(out.state);
        snapshots.push(env.snapshot());
        if out.terminal {
            success = true;
            break;
        }
        if out.truncated {
            break;
        }
    }
    if !success {
        return Err(Error::DemoGeneration(format!(
            "controller did not reach the goal from {start_cell:?} within {max_steps} steps"
        )));
    }
    let traj = DemoTrajectory {
        states,
        actions,
        snapshots,
        success,
    };
    verify_replay(maze, &traj)?;
    Ok(traj)
}

/// `count` demonstrations from distinct start cells drawn without
/// replacement from the initial-state cell distribution.
pub fn generate_dataset(
    maze: &PointMaze,
    count: usize,
    cfg: &DemoGenConfig,
    rng: &mut RngStream,
) -> Result<(DemoDataset, Vec<Cell>)> {
    let dist = maze.level_distribution();
    if count == 0 || count > dist.len() {
        return Err(Error::NotEnoughDemos {
            requested: count,
            available: dist.len(),
        });
    }
    let mut weights: Vec<f64> = dist.iter().map(|&(_, w)| w).collect();
    let mut cells = Vec::with_capacity(count);
    let mut trajectories = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.weighted_index(&weights).expect("weights stay positive");
        weights[i] = 0.0;
        cells.push(dist[i].0);
        trajectories.push(generate_demo(maze, dist[i].0, cfg, rng)?);
    }
    let dataset = DemoDataset {
        env_id: maze.env_id().to_string(),
        state_dim: maze.state_dim(),
        action_dim: maze.action_dim(),
        action_bounds: vec![(-1.0, 1.0); maze.action_dim()],
        trajectories,
    };
    dataset.validate()?;
    Ok((dataset, cells))
}

/// Replay the actions from the first snapshot and require the recorded
/// states and a final success.
pub fn verify_replay(maze: &PointMaze, traj: &DemoTrajectory) -> Result<()> {
    let mut env = maze.clone();
    env.reset_to_snapshot(&traj.snapshots[0])?;
    env.set_timelimit(traj.len());
    let mut last = None;
    for (t, a) in traj.actions.iter().enumerate() {
        let out = env.step(a)?;
        if out.state != traj.states[t + 1] {
            return Err(Error::DemoGeneration(format!("replay diverged at step {t}")));
        }
        last = Some(out);
    }
    if traj.success && !last.is_some_and(|o| o.terminal) {
        return Err(Error::DemoGeneration("replay did not end in success".into()));
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
