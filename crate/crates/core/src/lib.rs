//! Novelty-guided sample reuse (NSR) on top of DDPG with hindsight experience
//! replay, plus the toy goal-conditioned manipulation environments and the
//! experiment runner used to study it.
//!
//! The crate is organized the way the training stack is layered:
//!
//! - [`net`] — dense-network engine (forward, exact weighted-loss gradients,
//!   Adam, soft updates)
//! - [`envs`] — deterministic kinematic goal-conditioned tasks with sparse
//!   rewards
//! - [`replay`] — episode ring buffer with hindsight goal relabeling at
//!   sample time
//! - [`novelty`] — random network distillation novelty estimator and the
//!   weight normalization/clamping that turns novelty into per-sample update
//!   weights
//! - [`agent`] — the DDPG agent with novelty-weighted actor/critic updates,
//!   reuse counts, and the ablation weight modes
//! - [`runner`] — seeded experiment orchestration, evaluation, and metrics
//!   CSV emission

pub mod agent;
pub mod envs;
pub mod error;
pub mod net;
pub mod novelty;
pub mod replay;
pub mod runner;
pub mod seeding;

pub use error::{Error, Result};
