//! Throughput-optimal channel selection for an RF-powered cognitive radio
//! secondary user.
//!
//! The secondary user picks one channel per slot. On an idle channel it
//! spends energy to send a queued packet; on a busy channel it tries to
//! harvest a unit of RF energy. [`model`] builds the exact average-reward
//! MDP over (energy, queue) states, [`solver`] finds the optimal policy and
//! evaluates arbitrary ones, [`simulator`] cross-checks both by Monte Carlo,
//! and [`experiments`] produces the sweep tables emitted by the `rfcr` CLI.

pub mod config;
pub mod experiments;
pub mod model;
pub mod par;
pub mod policy;
pub mod simulator;
pub mod solver;

pub use model::{
    build_model, enumerate_states, immediate_reward, successor_distribution, Action,
    ChannelParams, ModelConfig, ModelError, State, StateDistribution, TransitionModel,
};
pub use par::Execution;
pub use policy::{Policy, PolicyError};
pub use simulator::{simulate, simulate_with, visit_frequencies, SimConfig, SimReport};
pub use solver::{
    best_static_policy, evaluate_policy, oracle_enumerate, solve_rvi, stationary_distribution,
    SolveOptions, SolveResult, SolverError,
};

/// Number formatting shared by every CSV and report: 13 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.12e}")
}
