//! Actor-critic training on top of the BCD solver.
//!
//! The policy picks the auxiliary block of each BCD step; the log-SINR block
//! is still solved exactly, so every emitted point is feasible. Pure
//! DDPG/TD3 baselines that act on power directly are included for
//! comparison.

pub mod agent;
pub mod beam_env;
pub mod env;
pub mod error;
pub mod neural;
pub mod replay;
pub mod train;

pub use error::{LearnError, Result};
