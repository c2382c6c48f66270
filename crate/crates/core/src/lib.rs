//! Reverse-forward curriculum learning from a handful of demonstrations.
//!
//! A per-demonstration reverse curriculum first teaches the agent to succeed
//! from states along each demonstration, moving the start point backwards as
//! it improves. A prioritized forward curriculum then widens coverage to the
//! full initial state distribution. Both stages train the same soft
//! actor-critic on a 50/50 mix of online and demonstration data.

pub mod buffers;
pub mod demo;
pub mod envs;
pub mod error;
pub mod forward;
pub mod golden;
pub mod learner;
pub mod reverse;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use learner::{Learner, LearnerConfig};
pub use rng::RngStream;
pub use scalar::Scalar;

pub type Learner32 = learner::Learner<f32>;
pub type Learner64 = learner::Learner<f64>;
pub type Mlp32 = learner::Mlp<f32>;
pub type Mlp64 = learner::Mlp<f64>;
