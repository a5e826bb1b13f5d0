//! Spill-regulation core.
//!
//! A seeded surrogate of a slow-extraction spill, the Spill Duty Factor and
//! reward metrics, a discrete PID controller with a grid tuner, the
//! neuralized-PID policy, a small dense-network toolkit with exact
//! gradients, and a PPO trainer. Everything here is `no_std` + `alloc`;
//! file formats, threading and the command line live in the `spillreg`
//! crate.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod controllers;
pub mod error;
pub mod gradnet;
pub mod metrics;
pub mod ppo;
pub mod rng;
pub mod spillsim;

pub use controllers::{
    pid_update, policy_mean, policy_sample, run_pid_episode, tune_pid, ErrorState, FeatureTracker,
    PidGains, PidGrid, Policy, PolicyParams, PolicyVariant, StateVariant, StateVector,
};
pub use error::{Error, Result};
pub use gradnet::{Activation, AdamState, DenseNet, Optimizer, OptimizerKind};
pub use metrics::{improvement, sdf, ImprovementReport, RewardConfig, RewardKind, SdfReport};
pub use ppo::{compute_gae, ppo_update, train, RolloutBuffer, TrainConfig, TrainOutcome};
pub use rng::SimRng;
pub use spillsim::{EnvConfig, Episode, SpillEnv, SpillTrace};
