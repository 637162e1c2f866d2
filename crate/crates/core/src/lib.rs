//! Generative policy optimization with an exactly invertible coupled flow.
//!
//! The policy samples a doubled "dummy" action `(x, y)` by pushing two
//! independent Gaussian noise vectors through alternating shear updates and a
//! linear mixing step. Every step inverts in closed form, so the policy's
//! log-density is exact: the standard normal density of the recovered noise
//! plus a constant log-determinant from the mixing coefficient. That exact
//! likelihood drives a PPO-style trainer with entropy and KL estimates, a
//! compression penalty on `x - y`, and a KL-adaptive learning rate.

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod flow_policy;
pub mod oracle;
pub mod objectives;
pub mod envs;
pub mod rollout;
pub mod trainer;
pub mod cli;
