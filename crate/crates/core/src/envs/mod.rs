//! State-resettable environments.

mod demo_gen;
mod maze;

pub use demo_gen::{generate_dataset, generate_demo, verify_replay, waypoints, DemoGenConfig};
pub use maze::{Cell, MazeSpec, PointMaze, DEFAULT_MAZE};

use crate::error::{Error, Result};

/// Opaque simulator state captured by [`ResettableEnv::snapshot`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvSnapshot {
    pub env_id: String,
    pub version: u32,
    pub payload: Vec<u8>,
}

impl EnvSnapshot {
    pub fn new(env_id: impl Into<String>, version: u32, payload: Vec<u8>) -> Self {
        Self {
            env_id: env_id.into(),
            version,
            payload,
        }
    }

    /// Blob stored in the demo container; the env id lives in the file header.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.payload.len());
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_blob(env_id: &str, blob: &[u8]) -> Result<Self> {
        if blob.len() < 4 {
            return Err(Error::BadSnapshot);
        }
        Ok(Self {
            env_id: env_id.to_string(),
            version: u32::from_le_bytes(blob[..4].try_into().unwrap()),
            payload: blob[4..].to_vec(),
        })
    }
}

/// A seeded draw from the task's initial-state distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InitialStateLevel {
    pub level_id: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait ResettableEnv: Clone + Send {
    fn env_id(&self) -> &str;

    fn state_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    /// Full episode horizon of the task.
    fn horizon(&self) -> usize;

    /// Resolve a level to its initial state without touching the simulator.
    fn resolve_level(&self, level: InitialStateLevel) -> Vec<f64>;

    fn reset_to_level(&mut self, level: InitialStateLevel) -> Result<Vec<f64>>;

    fn reset_to_snapshot(&mut self, snap: &EnvSnapshot) -> Result<Vec<f64>>;

    fn snapshot(&self) -> EnvSnapshot;

    fn observe(&self) -> Vec<f64>;

    /// Step budget for the current episode; reset restores the full horizon.
    fn set_timelimit(&mut self, limit: usize);

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;

    /// Success predicate on the current simulator state.
    fn is_success(&self) -> bool;
}
