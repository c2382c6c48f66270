//! Continuous point-mass maze with sparse goal reward.
//!
//! World coordinates: `x` grows with the column index, `y` with the row
//! index; cell `(row, col)` covers `[col, col+1) x [row, row+1)` scaled by
//! `cell_size`. The observation is the agent position `(x, y)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{EnvSnapshot, InitialStateLevel, ResettableEnv, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};

pub const DEFAULT_MAZE: &str = "\
........
........
####....
........
........
....####
........
.......G";

const SNAPSHOT_VERSION: u32 = 1;
/// Distance kept from a wall face after a blocked move.
const WALL_MARGIN: f64 = 1e-6;
const ACTION_TOLERANCE: f64 = 1e-9;

pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeSpec {
    /// ASCII wall mask: `#` wall, `.` free, `G` goal (exactly one).
    pub layout: String,
    pub cell_size: f64,
    pub goal_radius: f64,
    pub max_step_displacement: f64,
    pub episode_horizon: usize,
    /// Leave cells visited by the demonstrations out of the level pool.
    pub exclude_demo_cells: bool,
}

impl Default for MazeSpec {
    fn default() -> Self {
        Self {
            layout: DEFAULT_MAZE.to_string(),
            cell_size: 1.0,
            goal_radius: 0.3,
            max_step_displacement: 0.2,
            episode_horizon: 100,
            exclude_demo_cells: false,
        }
    }
}

/// Parsed, validated maze geometry.
#[derive(Clone, Debug)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    walls: Vec<bool>,
    pub goal: Cell,
}

impl Grid {
    pub fn parse(layout: &str) -> Result<Self> {
        let lines: Vec<&str> = layout
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(Error::InvalidMaze("empty layout".into()));
        }
        let cols = lines[0].chars().count();
        let mut walls = Vec::with_capacity(lines.len() * cols);
        let mut goal = None;
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::InvalidMaze(format!("row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'G' => {
                        if goal.replace((r, c)).is_some() {
                            return Err(Error::InvalidMaze("more than one goal".into()));
                        }
                        walls.push(false);
                    }
                    other => {
                        return Err(Error::InvalidMaze(format!(
                            "unexpected character {other:?} at ({r}, {c})"
                        )))
                    }
                }
            }
        }
        let goal = goal.ok_or_else(|| Error::InvalidMaze("no goal cell".into()))?;
        let grid = Self {
            rows: lines.len(),
            cols,
            walls,
            goal,
        };
        let reach = grid.bfs_distances(goal);
        if grid.free_cells().any(|c| reach[grid.idx(c)].is_none()) {
            return Err(Error::InvalidMaze("free cells are not connected".into()));
        }
        Ok(grid)
    }

    #[inline]
    pub fn idx(&self, (r, c): Cell) -> usize {
        r * self.cols + c
    }

    pub fn is_wall(&self, (r, c): Cell) -> bool {
        self.walls[r * self.cols + c]
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.rows)
            .flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
            .filter(move |&c| !self.is_wall(c))
    }

    /// Free 8-neighbours; diagonals only when both adjoining sides are free.
    pub fn neighbours(&self, (r, c): Cell) -> Vec<Cell> {
        let free = |r: isize, c: isize| {
            r >= 0
                && c >= 0
                && (r as usize) < self.rows
                && (c as usize) < self.cols
                && !self.is_wall((r as usize, c as usize))
        };
        let (ri, ci) = (r as isize, c as isize);
        let mut out = Vec::with_capacity(8);
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if (dr, dc) == (0, 0) || !free(ri + dr, ci + dc) {
                    continue;
                }
                if dr != 0 && dc != 0 && !(free(ri + dr, ci) && free(ri, ci + dc)) {
                    continue;
                }
                out.push(((ri + dr) as usize, (ci + dc) as usize));
            }
        }
        out
    }

    /// Hop counts from `from` over the 8-connected free graph.
    pub fn bfs_distances(&self, from: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.rows * self.cols];
        let mut queue = VecDeque::new();
        dist[self.idx(from)] = Some(0);
        queue.push_back(from);
        while let Some(cell) = queue.pop_front() {
            let d = dist[self.idx(cell)].unwrap();
            for n in self.neighbours(cell) {
                if dist[self.idx(n)].is_none() {
                    dist[self.idx(n)] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Shortest cell path from `start` to the goal, inclusive of both ends.
    pub fn shortest_path(&self, start: Cell) -> Option<Vec<Cell>> {
        let dist = self.bfs_distances(self.goal);
        dist[self.idx(start)]?;
        let mut path = vec![start];
        let mut cur = start;
        while cur != self.goal {
            let d = dist[self.idx(cur)].unwrap();
            // Deterministic tie-break: first neighbour in scan order.
            cur = self
                .neighbours(cur)
                .into_iter()
                .find(|&n| dist[self.idx(n)] == Some(d - 1))?;
            path.push(cur);
        }
        Some(path)
    }

    pub fn manhattan_to_goal(&self, (r, c): Cell) -> usize {
        r.abs_diff(self.goal.0) + c.abs_diff(self.goal.1)
    }
}

#[derive(Clone, Debug)]
pub struct PointMaze {
    spec: MazeSpec,
    grid: Grid,
    env_id: String,
    /// Level pool membership per cell (walls and excluded cells are false).
    level_cells: Vec<Cell>,
    level_weights: Vec<f64>,
    pos: [f64; 2],
    steps: usize,
    timelimit: usize,
    live: bool,
}

impl PointMaze {
    pub fn new(spec: MazeSpec) -> Result<Self> {
        let grid = Grid::parse(&spec.layout)?;
        if !(spec.cell_size > 0.0) {
            return Err(Error::InvalidMaze("cell_size must be positive".into()));
        }
        if !(spec.goal_radius > 0.0 && spec.goal_radius < spec.cell_size / 2.0) {
            return Err(Error::InvalidMaze(
                "goal_radius must lie in (0, cell_size / 2)".into(),
            ));
        }
        if !(spec.max_step_displacement > 0.0 && spec.max_step_displacement < spec.cell_size) {
            return Err(Error::InvalidMaze(
                "max_step_displacement must lie in (0, cell_size)".into(),
            ));
        }
        let fingerprint = crc32fast::hash(
            format!(
                "{}|{}|{}|{}",
                grid.walls.iter().map(|&w| if w { '#' } else { '.' }).collect::<String>(),
                spec.cell_size,
                spec.goal_radius,
                spec.max_step_displacement
            )
            .as_bytes(),
        );
        let env_id = format!("pointmaze-{}x{}-{fingerprint:08x}", grid.rows, grid.cols);
        let mut env = Self {
            timelimit: spec.episode_horizon,
            spec,
            grid,
            env_id,
            level_cells: Vec::new(),
            level_weights: Vec::new(),
            pos: [0.0; 2],
            steps: 0,
            live: false,
        };
        env.set_excluded_cells(&[]);
        Ok(env)
    }

    pub fn spec(&self) -> &MazeSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn goal_center(&self) -> [f64; 2] {
        self.cell_center(self.grid.goal)
    }

    pub fn cell_center(&self, (r, c): Cell) -> [f64; 2] {
        let cs = self.spec.cell_size;
        [(c as f64 + 0.5) * cs, (r as f64 + 0.5) * cs]
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<Cell> {
        let cs = self.spec.cell_size;
        let (c, r) = ((p[0] / cs).floor(), (p[1] / cs).floor());
        if r < 0.0 || c < 0.0 || r as usize >= self.grid.rows || c as usize >= self.grid.cols {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    fn blocked(&self, p: [f64; 2]) -> bool {
        self.cell_of(p).is_none_or(|c| self.grid.is_wall(c))
    }

    /// Restrict the level pool; the biased weights are renormalized over the rest.
    ///
    /// Excluding every free cell is rejected silently by keeping the full pool.
    pub fn set_excluded_cells(&mut self, excluded: &[Cell]) {
        let mut cells: Vec<Cell> = self
            .grid
            .free_cells()
            .filter(|c| !excluded.contains(c))
            .collect();
        if cells.is_empty() {
            log::warn!("every free cell excluded from the level pool; keeping all");
            cells = self.grid.free_cells().collect();
        }
        self.level_weights = cells.iter().map(|&c| Self::cell_weight(&self.grid, c)).collect();
        self.level_cells = cells;
    }

    /// Unnormalized initial-state weight `(1 + manhattan(cell, goal))^2`.
    pub fn cell_weight(grid: &Grid, cell: Cell) -> f64 {
        let d = grid.manhattan_to_goal(cell) as f64;
        (1.0 + d) * (1.0 + d)
    }

    /// Exact initial-state cell distribution over the level pool.
    pub fn level_distribution(&self) -> Vec<(Cell, f64)> {
        let total: f64 = self.level_weights.iter().sum();
        self.level_cells
            .iter()
            .zip(&self.level_weights)
            .map(|(&c, &w)| (c, w / total))
            .collect()
    }

    /// Place the agent at a uniform position inside `cell` for `rng`.
    pub fn sample_in_cell(&self, cell: Cell, rng: &mut RngStream) -> [f64; 2] {
        let cs = self.spec.cell_size;
        let (r, c) = cell;
        // Keep strictly inside the half-open cell.
        let u = rng.uniform_range(WALL_MARGIN, cs - WALL_MARGIN);
        let v = rng.uniform_range(WALL_MARGIN, cs - WALL_MARGIN);
        [c as f64 * cs + u, r as f64 * cs + v]
    }

    /// Reset to an explicit position (evaluation grids, demo starts).
    pub fn reset_to_position(&mut self, p: [f64; 2]) -> Result<Vec<f64>> {
        if self.blocked(p) {
            return Err(Error::InvalidMaze(format!("position {p:?} is inside a wall")));
        }
        self.pos = p;
        self.begin_episode();
        Ok(self.observe())
    }

    fn begin_episode(&mut self) {
        self.steps = 0;
        self.timelimit = self.spec.episode_horizon;
        self.live = true;
    }

    fn in_goal(&self, p: [f64; 2]) -> bool {
        let g = self.goal_center();
        let (dx, dy) = (p[0] - g[0], p[1] - g[1]);
        (dx * dx + dy * dy).sqrt() <= self.spec.goal_radius
    }

    /// Move one axis, stopping at the face of a wall cell.
    fn move_axis(&self, p: [f64; 2], axis: usize, delta: f64) -> f64 {
        let mut q = p;
        q[axis] += delta;
        if !self.blocked(q) {
            return q[axis];
        }
        if delta == 0.0 {
            return p[axis];
        }
        let cs = self.spec.cell_size;
        let cell = (p[axis] / cs).floor();
        let face = if delta > 0.0 {
            (cell + 1.0) * cs - WALL_MARGIN
        } else {
            cell * cs + WALL_MARGIN
        };
        // Never move backwards when already closer than the margin.
        if delta > 0.0 {
            face.max(p[axis]).min(q[axis])
        } else {
            face.min(p[axis]).max(q[axis])
        }
    }
}

impl ResettableEnv for PointMaze {
    fn env_id(&self) -> &str {
        &self.env_id
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.spec.episode_horizon
    }

    fn resolve_level(&self, level: InitialStateLevel) -> Vec<f64> {
        let mut rng = RngStream::new(level.level_id, streams::LEVELS);
        let i = rng
            .weighted_index(&self.level_weights)
            .expect("level pool is never empty");
        let p = self.sample_in_cell(self.level_cells[i], &mut rng);
        p.to_vec()
    }

    fn reset_to_level(&mut self, level: InitialStateLevel) -> Result<Vec<f64>> {
        let p = self.resolve_level(level);
        assert!(!self.blocked([p[0], p[1]]), "level resolved inside a wall");
        self.reset_to_position([p[0], p[1]])
    }

    fn reset_to_snapshot(&mut self, snap: &EnvSnapshot) -> Result<Vec<f64>> {
        if snap.env_id != self.env_id || snap.version != SNAPSHOT_VERSION {
            return Err(Error::SnapshotMismatch {
                expected: format!("{}@v{SNAPSHOT_VERSION}", self.env_id),
                found: format!("{}@v{}", snap.env_id, snap.version),
            });
        }
        if snap.payload.len() != 16 {
            return Err(Error::BadSnapshot);
        }
        let x = f64::from_le_bytes(snap.payload[..8].try_into().unwrap());
        let y = f64::from_le_bytes(snap.payload[8..].try_into().unwrap());
        self.reset_to_position([x, y])
    }

    fn snapshot(&self) -> EnvSnapshot {
        let mut payload = Vec::with_capacity(16);
        payload.extend_from_slice(&self.pos[0].to_le_bytes());
        payload.extend_from_slice(&self.pos[1].to_le_bytes());
        EnvSnapshot::new(self.env_id.clone(), SNAPSHOT_VERSION, payload)
    }

    fn observe(&self) -> Vec<f64> {
        self.pos.to_vec()
    }

    fn set_timelimit(&mut self, limit: usize) {
        self.timelimit = limit;
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if !self.live {
            return Err(Error::NotReset);
        }
        if action.len() != 2 {
            return Err(Error::DimMismatch {
                what: "action",
                expected: 2,
                found: action.len(),
            });
        }
        let mut a = [action[0], action[1]];
        for v in &mut a {
            if !v.is_finite() {
                return Err(Error::NonFinite("action"));
            }
            if v.abs() > 1.0 + ACTION_TOLERANCE {
                log::debug!("clamping out-of-range action component {v}");
            }
            *v = v.clamp(-1.0, 1.0);
        }
        let d = self.spec.max_step_displacement;
        let x = self.move_axis(self.pos, 0, a[0] * d);
        let y = self.move_axis([x, self.pos[1]], 1, a[1] * d);
        self.pos = [x, y];
        self.steps += 1;
        let terminal = self.in_goal(self.pos);
        let truncated = !terminal && self.steps >= self.timelimit;
        if terminal || truncated {
            self.live = false;
        }
        Ok(StepOutcome {
            state: self.observe(),
            reward: if terminal { 1.0 } else { 0.0 },
            terminal,
            truncated,
        })
    }

    fn is_success(&self) -> bool {
        self.in_goal(self.pos)
    }
}
