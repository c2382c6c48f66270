//! Binary learner checkpoints.
//!
//! ```text
//! magic "RFCLCKPT" | version u32 | scalar name | state_dim u64 | action_dim u64
//! config (TOML text) | actor + Adam | critics + Adam | targets
//! log_temperature f64 + Adam | rng state (32 bytes) | update counters
//! crc32 of everything before it
//! ```
//! Strings and arrays are prefixed with a u64 length. Integers are little-endian.

use std::path::Path;

use super::{Adam, Learner, LearnerConfig};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RFCLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn array<T: Scalar>(&mut self, v: &[T]) {
        self.u64(v.len() as u64);
        for &x in v {
            x.write_le(&mut self.0);
        }
    }

    fn adam<T: Scalar>(&mut self, a: &Adam<T>) {
        self.array(&a.m);
        self.array(&a.v);
        self.u64(a.t);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {n}")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }

    fn array<T: Scalar>(&mut self, expected: usize, what: &str) -> Result<Vec<T>> {
        let n = self.len()?;
        if n != expected {
            return Err(Error::Checkpoint(format!("{what}: expected {expected} values, found {n}")));
        }
        let raw = self.take(n * T::BYTES)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }

    fn adam_into<T: Scalar>(&mut self, a: &mut Adam<T>, what: &str) -> Result<()> {
        let n = a.m.len();
        a.m = self.array(n, what)?;
        a.v = self.array(n, what)?;
        a.t = self.u64()?;
        Ok(())
    }
}

impl<T: Scalar> Learner<T> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.bytes(T::NAME.as_bytes());
        w.u64(self.state_dim as u64);
        w.u64(self.action_dim as u64);
        let cfg = toml::to_string(&self.cfg).expect("learner config serializes");
        w.bytes(cfg.as_bytes());
        w.array(&self.actor.params);
        w.adam(&self.actor_opt);
        for (c, o) in self.critics.iter().zip(&self.critic_opts) {
            w.array(&c.params);
            w.adam(o);
        }
        for t in &self.targets {
            w.array(&t.params);
        }
        w.0.extend_from_slice(&self.log_temperature.to_le_bytes());
        w.adam(&self.temperature_opt);
        w.0.extend_from_slice(&self.rng.state_bytes());
        w.u64(self.critic_updates);
        w.u64(self.actor_updates);
        let crc = crc32fast::hash(&w.0);
        w.0.extend_from_slice(&crc.to_le_bytes());
        w.0
    }

    pub fn from_checkpoint_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..8] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::BadVersion(version));
        }
        if buf.len() < 16 {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored:08x}, computed {computed:08x}"
            )));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let name = r.bytes()?;
        if name != T::NAME.as_bytes() {
            return Err(Error::Checkpoint(format!(
                "scalar type {} does not match {}",
                String::from_utf8_lossy(name),
                T::NAME
            )));
        }
        let state_dim = r.len()?;
        let action_dim = r.len()?;
        let cfg_text = std::str::from_utf8(r.bytes()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let cfg: LearnerConfig = toml::from_str(cfg_text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut l = Learner::<T>::new(cfg, state_dim, action_dim, &mut RngStream::new(0, 0))?;
        let n = l.actor.params.len();
        l.actor.params = r.array(n, "actor")?;
        r.adam_into(&mut l.actor_opt, "actor optimizer")?;
        for (c, o) in l.critics.iter_mut().zip(l.critic_opts.iter_mut()) {
            let n = c.params.len();
            c.params = r.array(n, "critic")?;
            r.adam_into(o, "critic optimizer")?;
        }
        for t in l.targets.iter_mut() {
            let n = t.params.len();
            t.params = r.array(n, "target critic")?;
        }
        l.log_temperature = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        r.adam_into(&mut l.temperature_opt, "temperature optimizer")?;
        l.rng = RngStream::from_state_bytes(r.take(32)?)?;
        l.critic_updates = r.u64()?;
        l.actor_updates = r.u64()?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(l)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffers::Batch;

    fn learner() -> Learner<f32> {
        let cfg = LearnerConfig {
            hidden: vec![8, 8],
            num_critics: 3,
            batch_size: 4,
            actor_update_every: 1,
            ..LearnerConfig::default()
        };
        Learner::new(cfg, 2, 2, &mut RngStream::new(3, 0)).unwrap()
    }

    fn batch() -> Batch {
        let mut b = Batch::zeros(4, 2, 2);
        for (i, v) in b.states.iter_mut().enumerate() {
            *v = i as f64 * 0.1;
        }
        b.rewards = vec![0.0, 1.0, 0.0, 1.0];
        b
    }

    #[test]
    fn round_trip_preserves_training_trajectory() {
        let mut a = learner();
        a.gradient_step(&batch()).unwrap();
        let mut b = Learner::<f32>::from_checkpoint_bytes(&a.to_checkpoint_bytes()).unwrap();
        assert_eq!(a, b);
        for _ in 0..3 {
            a.gradient_step(&batch()).unwrap();
            b.gradient_step(&batch()).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corruption_and_wrong_scalar() {
        let bytes = learner().to_checkpoint_bytes();
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(matches!(Learner::<f32>::from_checkpoint_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(Learner::<f64>::from_checkpoint_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(matches!(Learner::<f32>::from_checkpoint_bytes(b"nope"), Err(Error::BadMagic)));
    }
}
