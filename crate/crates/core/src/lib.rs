//! Reward extrapolation from ranked, action-free demonstrations.
//!
//! The pipeline: train a noisy tabular demonstrator on a gridworld
//! ([`demos::train_demonstrator`]), roll out its checkpoints, rank the
//! rollouts ([`demos`]), fit an ensemble of reward nets to the ranking
//! ([`reward::train_reward`]), plan against the learned reward
//! ([`policy::value_iteration`]) and measure the result on the hidden true
//! reward ([`policy::evaluate_policy`], [`eval`]).

pub mod demos;
pub mod env;
pub mod error;
pub mod eval;
pub mod kv;
pub mod nn;
pub mod policy;
pub mod presets;
pub mod reward;

pub use error::{Error, Result};
