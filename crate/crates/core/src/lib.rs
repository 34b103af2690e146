//! Simulator and benchmark harness for real-time online continual learning.
//!
//! A stream reveals labeled batches at a fixed rate. Each learner has a
//! stream-model relative complexity `k` (training cost per job, measured in
//! stream steps against plain experience replay), so under real-time
//! evaluation it can only start a training job every `k` steps and serves
//! predictions from a stale model in between.
//!
//! Module map:
//!
//! * [`nn`] – dense classifier, manual gradients, SGD, FLOPs meter
//! * [`stream`] – synthetic drifting streams, file streams, holdout/prefix splits
//! * [`schedule`] – job planning, real-time and slow-stream runners
//! * [`memory`] – replay buffer (FIFO / reservoir / GSS) and retrieval (uniform / MIR)
//! * [`learners`] – ER, ER--, ER++, ACE, LwF, RWalk, PoLRS, MIR, GSS
//! * [`metrics`] – average online accuracy, backward/forward transfer
//! * [`harness`] – configs, presets, run/compare/sweep/plot commands

pub mod error;
pub mod harness;
pub mod learners;
pub mod memory;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rational;
pub mod schedule;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
pub use rational::Rational;
