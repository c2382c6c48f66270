//! Demonstration data: transitions, trajectories with per-step snapshots, and
//! the `RFCLDEMO` binary container.
//!
//! Container layout (all integers and floats little-endian):
//!
//! ```text
//! "RFCLDEMO" | version u32 | env_id (u32 len + utf8) | state_dim u32 | action_dim u32
//! | action_bounds action_dim x (lo f64, hi f64) | trajectory count u32
//! | per trajectory:
//! |   length u32 | success u8 | states (T+1) x state_dim f64 | actions T x action_dim f64
//! |   snapshots (T+1) x (u32 len + blob) | crc32 u32 of everything above in this trajectory
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::envs::{EnvSnapshot, ResettableEnv};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const DEMO_MAGIC: &[u8; 8] = b"RFCLDEMO";
pub const DEMO_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.reward != 0.0 && self.reward != 1.0 {
            return Err(Error::InvalidDataset(format!(
                "sparse reward must be 0 or 1, got {}",
                self.reward
            )));
        }
        if self.terminal && self.truncated {
            return Err(Error::InvalidDataset(
                "transition is both terminal and truncated".into(),
            ));
        }
        if self.state.len() != self.next_state.len() {
            return Err(Error::DimMismatch {
                what: "next_state",
                expected: self.state.len(),
                found: self.next_state.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoTrajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub snapshots: Vec<EnvSnapshot>,
    pub success: bool,
}

impl DemoTrajectory {
    /// Number of actions, `T_i`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn validate(&self, index: usize, state_dim: usize, action_dim: usize) -> Result<()> {
        let t = self.actions.len();
        let bad = |msg: String| Err(Error::InvalidDataset(format!("trajectory {index}: {msg}")));
        if t == 0 {
            return bad("length must be positive".into());
        }
        if self.states.len() != t + 1 {
            return bad(format!("{} states for length {t}", self.states.len()));
        }
        if self.snapshots.len() != t + 1 {
            return bad(format!("{} snapshots for length {t}", self.snapshots.len()));
        }
        if let Some(s) = self.states.iter().find(|s| s.len() != state_dim) {
            return bad(format!("state of dim {} (expected {state_dim})", s.len()));
        }
        if let Some(a) = self.actions.iter().find(|a| a.len() != action_dim) {
            return bad(format!("action of dim {} (expected {action_dim})", a.len()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub env_id: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_bounds: Vec<(f64, f64)>,
    pub trajectories: Vec<DemoTrajectory>,
}

impl DemoDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::InvalidDataset("dataset has no trajectories".into()));
        }
        if self.action_bounds.len() != self.action_dim {
            return Err(Error::DimMismatch {
                what: "action_bounds",
                expected: self.action_dim,
                found: self.action_bounds.len(),
            });
        }
        for (i, traj) in self.trajectories.iter().enumerate() {
            traj.validate(i, self.state_dim, self.action_dim)?;
        }
        Ok(())
    }

    /// Indices of trajectories eligible for the reverse curriculum.
    pub fn successful(&self) -> Vec<usize> {
        self.trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| t.success)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn total_transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }
}

pub fn encode_demos(dataset: &DemoDataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(DEMO_MAGIC);
    put_u32(&mut out, DEMO_VERSION);
    put_u32(&mut out, dataset.env_id.len() as u32);
    out.extend_from_slice(dataset.env_id.as_bytes());
    put_u32(&mut out, dataset.state_dim as u32);
    put_u32(&mut out, dataset.action_dim as u32);
    for &(lo, hi) in &dataset.action_bounds {
        put_f64(&mut out, lo);
        put_f64(&mut out, hi);
    }
    put_u32(&mut out, dataset.trajectories.len() as u32);
    for traj in &dataset.trajectories {
        let start = out.len();
        put_u32(&mut out, traj.len() as u32);
        out.push(traj.success as u8);
        for s in &traj.states {
            s.iter().for_each(|&v| put_f64(&mut out, v));
        }
        for a in &traj.actions {
            a.iter().for_each(|&v| put_f64(&mut out, v));
        }
        for snap in &traj.snapshots {
            let blob = snap.to_blob();
            put_u32(&mut out, blob.len() as u32);
            out.extend_from_slice(&blob);
        }
        let crc = crc32fast::hash(&out[start..]);
        put_u32(&mut out, crc);
    }
    Ok(out)
}

pub fn decode_demos(bytes: &[u8]) -> Result<DemoDataset> {
    let mut r = Reader { bytes, pos: 0, index: None };
    if bytes.len() < DEMO_MAGIC.len() || &bytes[..DEMO_MAGIC.len()] != DEMO_MAGIC {
        return Err(Error::BadMagic);
    }
    r.pos = DEMO_MAGIC.len();
    let version = r.u32("version")?;
    if version != DEMO_VERSION {
        return Err(Error::BadVersion(version));
    }
    let id_len = r.u32("env_id length")? as usize;
    let env_id = String::from_utf8(r.take(id_len, "env_id")?.to_vec())
        .map_err(|_| Error::InvalidDataset("env_id is not utf-8".into()))?;
    let state_dim = r.u32("state_dim")? as usize;
    let action_dim = r.u32("action_dim")? as usize;
    let mut action_bounds = Vec::with_capacity(action_dim);
    for _ in 0..action_dim {
        action_bounds.push((r.f64("action bounds")?, r.f64("action bounds")?));
    }
    let count = r.u32("trajectory count")? as usize;
    let mut trajectories = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        r.index = Some(index);
        let start = r.pos;
        let len = r.u32("trajectory length")? as usize;
        // Bound the claimed length by what is left before allocating.
        let min_bytes = (len + 1) * state_dim * 8 + len * action_dim * 8;
        if min_bytes > bytes.len().saturating_sub(r.pos) {
            return Err(Error::Truncated {
                what: "trajectory payload",
                index: Some(index),
            });
        }
        let success = r.take(1, "success flag")?[0] != 0;
        let states = (0..=len)
            .map(|_| r.vec(state_dim, "states"))
            .collect::<Result<Vec<_>>>()?;
        let actions = (0..len)
            .map(|_| r.vec(action_dim, "actions"))
            .collect::<Result<Vec<_>>>()?;
        let mut blobs = Vec::with_capacity(len + 1);
        for _ in 0..=len {
            let n = r.u32("snapshot length")? as usize;
            blobs.push(r.take(n, "snapshot blob")?);
        }
        let computed = crc32fast::hash(&bytes[start..r.pos]);
        let stored = r.u32("checksum")?;
        if stored != computed {
            return Err(Error::Checksum {
                index,
                stored,
                computed,
            });
        }
        let snapshots = blobs
            .into_iter()
            .map(|b| EnvSnapshot::from_blob(&env_id, b))
            .collect::<Result<Vec<_>>>()?;
        trajectories.push(DemoTrajectory {
            states,
            actions,
            snapshots,
            success,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::InvalidDataset(format!(
            "{} trailing bytes after last trajectory",
            bytes.len() - r.pos
        )));
    }
    let dataset = DemoDataset {
        env_id,
        state_dim,
        action_dim,
        action_bounds,
        trajectories,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Write `dataset` to `path`. Validation happens before the file is touched.
pub fn save_demos(dataset: &DemoDataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_demos(dataset)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_demos(path: impl AsRef<Path>) -> Result<DemoDataset> {
    decode_demos(&fs::read(path)?)
}

/// Per-dimension action bounds at `factor` times the largest demonstrated
/// magnitude.
pub fn derive_action_rescale(dataset: &DemoDataset, factor: f64) -> Result<Vec<f64>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::config("factor", format!("must be positive, got {factor}")));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("dataset has no trajectories".into()));
    }
    let mut max_abs = vec![0.0f64; dataset.action_dim];
    for a in dataset.trajectories.iter().flat_map(|t| &t.actions) {
        for (m, v) in max_abs.iter_mut().zip(a) {
            *m = m.max(v.abs());
        }
    }
    max_abs
        .into_iter()
        .enumerate()
        .map(|(dim, m)| {
            if m == 0.0 {
                Err(Error::ZeroActionBound { dim })
            } else {
                Ok(m * factor)
            }
        })
        .collect()
}

/// Maps between the policy's unit box and the environment's action range.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionScale {
    bounds: Vec<f64>,
}

impl ActionScale {
    pub fn identity(action_dim: usize) -> Self {
        Self {
            bounds: vec![1.0; action_dim],
        }
    }

    pub fn new(bounds: Vec<f64>) -> Result<Self> {
        if let Some(dim) = bounds.iter().position(|b| !(*b > 0.0)) {
            return Err(Error::ZeroActionBound { dim });
        }
        Ok(Self { bounds })
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn to_env(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter().zip(&self.bounds).map(|(u, b)| u * b).collect()
    }

    /// Inverse of [`to_env`](Self::to_env), clamped into the unit box.
    pub fn to_unit(&self, env: &[f64]) -> Vec<f64> {
        env.iter()
            .zip(&self.bounds)
            .map(|(a, b)| (a / b).clamp(-1.0, 1.0))
            .collect()
    }
}

/// Uniform subsample without replacement; keeps the original order.
pub fn subsample_demos(dataset: &DemoDataset, count: usize, rng: &mut RngStream) -> Result<DemoDataset> {
    let n = dataset.len();
    if count == 0 || count > n {
        return Err(Error::NotEnoughDemos {
            requested: count,
            available: n,
        });
    }
    let mut picked = rand::seq::index::sample(rng, n, count).into_vec();
    picked.sort_unstable();
    Ok(DemoDataset {
        trajectories: picked
            .into_iter()
            .map(|i| dataset.trajectories[i].clone())
            .collect(),
        ..dataset.clone()
    })
}

/// Flatten demonstrations into transitions in the policy's action space.
///
/// Rewards come from the environment's success predicate evaluated on the
/// restored next-state snapshot rather than from anything stored in the file.
pub fn demo_transitions<E: ResettableEnv>(
    dataset: &DemoDataset,
    env: &mut E,
    scale: &ActionScale,
) -> Result<Vec<Transition>> {
    let mut out = Vec::with_capacity(dataset.total_transitions());
    for traj in &dataset.trajectories {
        for t in 0..traj.len() {
            env.reset_to_snapshot(&traj.snapshots[t + 1])?;
            let success = env.is_success();
            let last = t + 1 == traj.len();
            out.push(Transition {
                state: traj.states[t].clone(),
                action: scale.to_unit(&traj.actions[t]),
                reward: if success { 1.0 } else { 0.0 },
                next_state: traj.states[t + 1].clone(),
                terminal: success,
                truncated: last && !success,
            });
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    index: Option<usize>,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                what,
                index: self.index,
            }),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn vec(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }
}


#[cfg(test)]
mod tests {
    use super::tests_support::toy_dataset;
    use super::*;

    #[test]
    fn header_mirrors_input() {
        let ds = toy_dataset(1, 10, 4);
        let bytes = encode_demos(&ds).unwrap();
        assert_eq!(&bytes[..8], DEMO_MAGIC);
        let id_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mut p = 16 + id_len;
        let rd = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
        assert_eq!(rd(p), 4);
        p += 8 + 2 * 16;
        assert_eq!(rd(p), 1);
        assert_eq!(rd(p + 4), 10);
    }

    #[test]
    fn round_trip_is_identity() {
        let ds = toy_dataset(3, 7, 2);
        let back = decode_demos(&encode_demos(&ds).unwrap()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn encoding_is_deterministic() {
        let ds = toy_dataset(2, 5, 2);
        assert_eq!(encode_demos(&ds).unwrap(), encode_demos(&ds.clone()).unwrap());
    }

    #[test]
    fn mismatched_actions_rejected_before_write() {
        let mut ds = toy_dataset(1, 5, 2);
        ds.trajectories[0].actions.pop();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rfcl");
        assert!(matches!(save_demos(&ds, &path), Err(Error::InvalidDataset(_))));
        assert!(!path.exists());
    }

    #[test]
    fn empty_file_is_bad_magic() {
        assert!(matches!(decode_demos(&[]), Err(Error::BadMagic)));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode_demos(&toy_dataset(1, 3, 2)).unwrap();
        bytes[8] = 99;
        assert!(matches!(decode_demos(&bytes), Err(Error::BadVersion(99))));
    }

    #[test]
    fn corrupted_length_names_trajectory() {
        let ds = toy_dataset(3, 4, 2);
        let mut bytes = encode_demos(&ds).unwrap();
        // Offset of the second trajectory's length field.
        let first = encode_demos(&DemoDataset {
            trajectories: ds.trajectories[..1].to_vec(),
            ..ds.clone()
        })
        .unwrap();
        let off = first.len();
        bytes[off] ^= 0x01;
        match decode_demos(&bytes) {
            Err(Error::Checksum { index, .. }) => assert_eq!(index, 1),
            Err(Error::Truncated { index, .. }) => assert_eq!(index, Some(1)),
            other => panic!("expected structured error, got {other:?}"),
        }
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let ds = toy_dataset(2, 4, 2);
        let mut bytes = encode_demos(&ds).unwrap();
        let first = encode_demos(&DemoDataset {
            trajectories: ds.trajectories[..1].to_vec(),
            ..ds.clone()
        })
        .unwrap();
        // First state value of trajectory 1, past its length and success flag.
        bytes[first.len() + 5] ^= 0xff;
        assert!(matches!(decode_demos(&bytes), Err(Error::Checksum { index: 1, .. })));
    }

    #[test]
    fn truncated_file_reports_truncation() {
        let bytes = encode_demos(&toy_dataset(1, 4, 2)).unwrap();
        let err = decode_demos(&bytes[..bytes.len() - 3]).unwrap_err();
        assert_eq!(err.code(), "E_TRUNCATED");
    }

    #[test]
    fn action_rescale_scales_max_magnitude() {
        let mut ds = toy_dataset(1, 3, 2);
        ds.trajectories[0].actions = vec![vec![0.1, -0.3], vec![-0.4, 0.2], vec![0.25, 0.1]];
        let b = derive_action_rescale(&ds, 1.25).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-15);
        assert!((b[1] - 0.375).abs() < 1e-15);
        let b1 = derive_action_rescale(&ds, 1.0).unwrap();
        assert_eq!(b1, vec![0.4, 0.3]);
    }

    #[test]
    fn action_rescale_zero_dimension_errors() {
        let mut ds = toy_dataset(1, 3, 2);
        ds.action_dim = 3;
        ds.trajectories[0].actions = vec![vec![0.1, -0.3, 0.0]; 3];
        assert!(matches!(
            derive_action_rescale(&ds, 1.25),
            Err(Error::ZeroActionBound { dim: 2 })
        ));
    }

    #[test]
    fn subsample_full_count_is_identity() {
        let ds = toy_dataset(4, 3, 2);
        let mut rng = RngStream::new(5, 0);
        assert_eq!(subsample_demos(&ds, 4, &mut rng).unwrap(), ds);
    }

    #[test]
    fn subsample_is_reproducible() {
        let ds = toy_dataset(6, 3, 2);
        let a = subsample_demos(&ds, 1, &mut RngStream::new(11, 0)).unwrap();
        let b = subsample_demos(&ds, 1, &mut RngStream::new(11, 0)).unwrap();
        assert_eq!(a, b);
        assert!(subsample_demos(&ds, 7, &mut RngStream::new(11, 0)).is_err());
    }

    #[test]
    fn subsample_preserves_original_order() {
        let ds = toy_dataset(8, 2, 2);
        let sub = subsample_demos(&ds, 4, &mut RngStream::new(2, 0)).unwrap();
        let firsts: Vec<f64> = sub.trajectories.iter().map(|t| t.states[0][0]).collect();
        assert!(firsts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subsample_single_is_uniform() {
        // 10k draws of count=1 from N=5: each index expected 2000 +- 150.
        let ds = toy_dataset(5, 2, 2);
        let mut rng = RngStream::new(77, 0);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            let s = subsample_demos(&ds, 1, &mut rng).unwrap();
            let i = (s.trajectories[0].states[0][0] / 10.0).round() as usize;
            counts[i] += 1;
        }
        for c in counts {
            assert!((1850..=2150).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn action_scale_round_trip_and_clamp() {
        let s = ActionScale::new(vec![0.5, 2.0]).unwrap();
        assert_eq!(s.to_env(&[1.0, -0.5]), vec![0.5, -1.0]);
        assert_eq!(s.to_unit(&[0.25, -4.0]), vec![0.5, -1.0]);
        assert!(ActionScale::new(vec![0.0, 1.0]).is_err());
    }
}
