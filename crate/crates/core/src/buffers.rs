//! Transition storage and the online/offline mixed sampler.

use crate::demo::Transition;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Fixed-capacity FIFO ring of transitions with flat storage.
///
/// Dimensions are fixed by the first insertion.
#[derive(Clone, Debug)]
pub struct TransitionBuffer {
    capacity: usize,
    dims: Option<(usize, usize)>,
    states: Vec<f64>,
    actions: Vec<f64>,
    next_states: Vec<f64>,
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    truncateds: Vec<bool>,
    size: usize,
    cursor: usize,
}

impl TransitionBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            dims: None,
            states: Vec::new(),
            actions: Vec::new(),
            next_states: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
            truncateds: Vec::new(),
            size: 0,
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    fn check_dims(&self, state: usize, action: usize) -> Result<()> {
        if let Some((s, a)) = self.dims {
            if state != s {
                return Err(Error::DimMismatch {
                    what: "state",
                    expected: s,
                    found: state,
                });
            }
            if action != a {
                return Err(Error::DimMismatch {
                    what: "action",
                    expected: a,
                    found: action,
                });
            }
        }
        Ok(())
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        t.validate()?;
        self.check_dims(t.state.len(), t.action.len())?;
        let (sd, ad) = *self.dims.get_or_insert((t.state.len(), t.action.len()));
        if self.size < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.next_states.extend_from_slice(&t.next_state);
            self.rewards.push(t.reward);
            self.terminals.push(t.terminal);
            self.truncateds.push(t.truncated);
            self.size += 1;
        } else {
            let i = self.cursor;
            self.states[i * sd..(i + 1) * sd].copy_from_slice(&t.state);
            self.actions[i * ad..(i + 1) * ad].copy_from_slice(&t.action);
            self.next_states[i * sd..(i + 1) * sd].copy_from_slice(&t.next_state);
            self.rewards[i] = t.reward;
            self.terminals[i] = t.terminal;
            self.truncateds[i] = t.truncated;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Physical slot of the `k`-th oldest entry.
    fn slot(&self, k: usize) -> usize {
        if self.size < self.capacity {
            k
        } else {
            (self.cursor + k) % self.capacity
        }
    }

    pub fn get(&self, k: usize) -> Option<Transition> {
        if k >= self.size {
            return None;
        }
        let (sd, ad) = self.dims?;
        let i = self.slot(k);
        Some(Transition {
            state: self.states[i * sd..(i + 1) * sd].to_vec(),
            action: self.actions[i * ad..(i + 1) * ad].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * sd..(i + 1) * sd].to_vec(),
            terminal: self.terminals[i],
            truncated: self.truncateds[i],
        })
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.size).filter_map(move |k| self.get(k))
    }

    /// Append the newest transitions of `src` that fit in the free space,
    /// in chronological order. Existing entries are never overwritten.
    ///
    /// Returns how many of the oldest `src` transitions were left out.
    pub fn absorb(&mut self, src: &TransitionBuffer) -> Result<usize> {
        if let Some((s, a)) = src.dims {
            self.check_dims(s, a)?;
        }
        let room = self.capacity - self.size;
        let skipped = src.size.saturating_sub(room);
        for t in src.iter().skip(skipped) {
            self.push(&t)?;
        }
        if skipped > 0 {
            log::info!("absorb left out {skipped} oldest transitions at capacity {}", self.capacity);
        }
        Ok(skipped)
    }

    fn write_row(&self, k_physical: usize, batch: &mut Batch, row: usize) {
        let (sd, ad) = self.dims.expect("non-empty buffer has dims");
        let i = k_physical;
        batch.states[row * sd..(row + 1) * sd].copy_from_slice(&self.states[i * sd..(i + 1) * sd]);
        batch.actions[row * ad..(row + 1) * ad].copy_from_slice(&self.actions[i * ad..(i + 1) * ad]);
        batch.next_states[row * sd..(row + 1) * sd]
            .copy_from_slice(&self.next_states[i * sd..(i + 1) * sd]);
        batch.rewards[row] = self.rewards[i];
        batch.terminals[row] = self.terminals[i];
        batch.truncateds[row] = self.truncateds[i];
    }

    /// Uniform with replacement.
    pub fn sample(&self, batch: usize, rng: &mut RngStream) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer("online"));
        }
        let (sd, ad) = self.dims.unwrap();
        let mut out = Batch::zeros(batch, sd, ad);
        for row in 0..batch {
            let i = rng.index(self.size);
            self.write_row(i, &mut out, row);
        }
        Ok(out)
    }
}

/// Row-major minibatch. `from_offline[b]` records the source buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub terminals: Vec<bool>,
    pub truncateds: Vec<bool>,
    pub from_offline: Vec<bool>,
}

impl Batch {
    pub fn zeros(len: usize, state_dim: usize, action_dim: usize) -> Self {
        Self {
            len,
            state_dim,
            action_dim,
            states: vec![0.0; len * state_dim],
            actions: vec![0.0; len * action_dim],
            rewards: vec![0.0; len],
            next_states: vec![0.0; len * state_dim],
            terminals: vec![false; len],
            truncateds: vec![false; len],
            from_offline: vec![false; len],
        }
    }

    pub fn from_transitions(ts: &[Transition]) -> Self {
        let sd = ts.first().map_or(0, |t| t.state.len());
        let ad = ts.first().map_or(0, |t| t.action.len());
        let mut b = Self::zeros(ts.len(), sd, ad);
        for (row, t) in ts.iter().enumerate() {
            b.states[row * sd..(row + 1) * sd].copy_from_slice(&t.state);
            b.actions[row * ad..(row + 1) * ad].copy_from_slice(&t.action);
            b.next_states[row * sd..(row + 1) * sd].copy_from_slice(&t.next_state);
            b.rewards[row] = t.reward;
            b.terminals[row] = t.terminal;
            b.truncateds[row] = t.truncated;
        }
        b
    }

    pub fn offline_count(&self) -> usize {
        self.from_offline.iter().filter(|&&o| o).count()
    }
}

/// Draws `ceil(B/2)` online and `floor(B/2)` offline rows (for the default
/// 50:50 ratio), then shuffles the rows.
#[derive(Clone, Copy, Debug)]
pub struct MixedSampler<'a> {
    pub online: &'a TransitionBuffer,
    pub offline: &'a TransitionBuffer,
    /// Offline share of each batch, in `(0, 1]`.
    pub ratio: f64,
}

impl<'a> MixedSampler<'a> {
    pub fn new(online: &'a TransitionBuffer, offline: &'a TransitionBuffer) -> Self {
        Self {
            online,
            offline,
            ratio: 0.5,
        }
    }

    pub fn offline_rows(&self, batch: usize) -> usize {
        // Ties go to the online buffer.
        let x = self.ratio * batch as f64;
        let r = x.round();
        if (x - x.floor() - 0.5).abs() < 1e-12 {
            x.floor() as usize
        } else {
            r as usize
        }
    }

    pub fn sample_mixed(&self, batch: usize, rng: &mut RngStream) -> Result<Batch> {
        if self.offline.is_empty() {
            return Err(Error::EmptyBuffer("offline"));
        }
        if self.online.is_empty() {
            return Err(Error::EmptyBuffer("online"));
        }
        let (sd, ad) = self.online.dims.unwrap();
        self.offline.check_dims(sd, ad)?;
        let n_off = self.offline_rows(batch);
        let n_on = batch - n_off;
        let mut out = Batch::zeros(batch, sd, ad);
        // Shuffle row positions, then fill: first n_on positions online.
        let mut order: Vec<usize> = (0..batch).collect();
        for i in (1..batch).rev() {
            let j = rng.index(i + 1);
            order.swap(i, j);
        }
        for (k, &row) in order.iter().enumerate() {
            if k < n_on {
                let i = rng.index(self.online.size);
                self.online.write_row(i, &mut out, row);
            } else {
                let i = rng.index(self.offline.size);
                self.offline.write_row(i, &mut out, row);
                out.from_offline[row] = true;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(v: f64) -> Transition {
        Transition {
            state: vec![v, 0.0],
            action: vec![0.0, 0.0],
            reward: 0.0,
            next_state: vec![v + 1.0, 0.0],
            terminal: false,
            truncated: false,
        }
    }

    fn filled(n: usize, cap: usize) -> TransitionBuffer {
        let mut b = TransitionBuffer::new(cap);
        (0..n).for_each(|i| b.push(&tr(i as f64)).unwrap());
        b
    }

    #[test]
    fn fifo_overwrite() {
        let mut b = TransitionBuffer::new(3);
        for i in 1..=4 {
            b.push(&tr(i as f64)).unwrap();
        }
        let xs: Vec<f64> = b.iter().map(|t| t.state[0]).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn push_to_empty() {
        let mut b = TransitionBuffer::new(10);
        b.push(&tr(0.0)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn wrong_action_dim_rejected() {
        let mut b = filled(1, 4);
        let mut t = tr(1.0);
        t.action = vec![0.0; 3];
        assert!(matches!(b.push(&t), Err(Error::DimMismatch { what: "action", .. })));
    }

    #[test]
    fn invalid_transition_rejected() {
        let mut b = TransitionBuffer::new(4);
        let mut t = tr(1.0);
        t.reward = 0.5;
        assert!(b.push(&t).is_err());
        let mut t = tr(1.0);
        t.terminal = true;
        t.truncated = true;
        assert!(b.push(&t).is_err());
    }

    #[test]
    fn batch_split_even_and_odd() {
        let on = filled(10, 100);
        let off = filled(10, 100);
        let s = MixedSampler::new(&on, &off);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(s.sample_mixed(256, &mut rng).unwrap().offline_count(), 128);
        let b = s.sample_mixed(257, &mut rng).unwrap();
        assert_eq!(b.offline_count(), 128);
        assert_eq!(b.len, 257);
    }

    #[test]
    fn empty_buffers_are_errors() {
        let on = filled(3, 10);
        let empty = TransitionBuffer::new(10);
        let mut rng = RngStream::new(0, 0);
        let err = MixedSampler::new(&on, &empty).sample_mixed(8, &mut rng).unwrap_err();
        assert!(matches!(err, Error::EmptyBuffer("offline")));
        let err = MixedSampler::new(&empty, &on).sample_mixed(8, &mut rng).unwrap_err();
        assert!(matches!(err, Error::EmptyBuffer("online")));
    }

    #[test]
    fn absorb_appends_in_order() {
        let mut dst = filled(5, 1000);
        let src = filled(100, 1000);
        assert_eq!(dst.absorb(&src).unwrap(), 0);
        assert_eq!(dst.len(), 105);
        assert_eq!(src.len(), 100);
        assert_eq!(dst.get(5).unwrap().state[0], 0.0);
        assert_eq!(dst.get(104).unwrap().state[0], 99.0);
    }

    #[test]
    fn absorb_empty_is_noop() {
        let mut dst = filled(5, 10);
        dst.absorb(&TransitionBuffer::new(3)).unwrap();
        assert_eq!(dst.len(), 5);
    }

    #[test]
    fn absorb_over_capacity_keeps_newest() {
        let mut dst = TransitionBuffer::new(50);
        let src = filled(100, 1000);
        assert_eq!(dst.absorb(&src).unwrap(), 50);
        let xs: Vec<f64> = dst.iter().map(|t| t.state[0]).collect();
        assert_eq!(xs, (50..100).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn absorb_never_evicts_existing_entries() {
        let mut dst = filled(10, 30);
        let src = filled(100, 1000);
        assert_eq!(dst.absorb(&src).unwrap(), 80);
        assert_eq!(dst.len(), 30);
        let xs: Vec<f64> = dst.iter().map(|t| t.state[0]).collect();
        let mut expect: Vec<f64> = (0..10).map(|i| i as f64).collect();
        expect.extend((80..100).map(|i| i as f64));
        assert_eq!(xs, expect);
    }
}
