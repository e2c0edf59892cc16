//! Tabular Bayesian model-based reinforcement learning with uncertainty Bellman equations.
//!
//! The crate maintains a conjugate posterior over finite MDPs, estimates the posterior
//! variance of Q-values with several estimators (an exact uncertainty Bellman equation,
//! the classic upper bound, and raw ensemble variance), and uses those estimates for
//! optimistic exploration on DeepSea and a seven-room gridworld.

pub mod envs;
pub mod error;
pub mod exploration;
pub mod harness;
mod linalg;
pub mod mdp;
pub mod posterior;
pub mod variance;

pub use error::{Error, Result};
pub use mdp::{Policy, QFunction, TabularMdp, ValueFunction};
pub use posterior::{MdpPosterior, TransitionRecord};
