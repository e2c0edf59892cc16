//! Benchmark environments and their true MDPs.

pub mod deepsea;
pub mod sevenroom;
pub mod toy;

use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mdp::{optimal_finite_horizon_return, TabularMdp};

pub use deepsea::DeepSea;
pub use sevenroom::SevenRoom;
pub use toy::{toy_mrp_fixture, ToyMrpFixture, ToyRow, ToyTable};

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next_state: usize,
    pub reward: f64,
    /// The episode ended in a terminal transition. Time-limit truncation is not reported here.
    pub done: bool,
}

/// An episodic environment with a known tabular model.
///
/// States are `0..num_states()`. The true MDP appends one absorbing terminal state with
/// index `num_states()`.
pub trait Environment: Send + Sync {
    fn id(&self) -> String;
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Maximum number of steps per episode.
    fn horizon(&self) -> usize;
    fn initial_dist(&self) -> Array1<f64>;
    fn reset(&self, rng: &mut dyn RngCore) -> usize;
    fn step(&self, state: usize, action: usize, rng: &mut dyn RngCore) -> Step;
    fn true_mdp(&self, discount: f64) -> Result<TabularMdp>;
    /// Whether a transition collects the environment's sparse reward.
    fn is_goal(&self, state: usize, action: usize, next_state: usize) -> bool;
}

/// Best expected undiscounted return over one episode of `env`.
pub fn optimal_return(env: &dyn Environment) -> Result<f64> {
    Ok(optimal_finite_horizon_return(&env.true_mdp(1.0)?, env.horizon()))
}

/// Environment identifier with parameters, e.g. `deepsea:L=30`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvSpec {
    DeepSea { size: usize },
    SevenRoom,
    ToyMrp,
}

impl EnvSpec {
    /// Instantiates a runnable environment. The toy MRP has no actions to learn and is
    /// rejected.
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        match *self {
            EnvSpec::DeepSea { size } => Ok(Box::new(DeepSea::new(size)?)),
            EnvSpec::SevenRoom => Ok(Box::new(SevenRoom::new())),
            EnvSpec::ToyMrp => Err(Error::Config(
                "toymrp is a fixed reward process; use the toy-table command".into(),
            )),
        }
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvSpec::DeepSea { size } => write!(f, "deepsea:L={size}"),
            EnvSpec::SevenRoom => f.write_str("sevenroom"),
            EnvSpec::ToyMrp => f.write_str("toymrp"),
        }
    }
}

impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        match (name.to_ascii_lowercase().as_str(), params) {
            ("deepsea", Some(p)) => {
                let size = p
                    .split(',')
                    .filter_map(|kv| kv.split_once('='))
                    .find(|(k, _)| k.trim() == "L")
                    .ok_or_else(|| Error::Config(format!("deepsea needs L=<size>, got '{p}'")))?
                    .1
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("bad deepsea size: {e}")))?;
                Ok(EnvSpec::DeepSea { size })
            }
            ("deepsea", None) => Err(Error::Config("deepsea needs a size, e.g. deepsea:L=10".into())),
            ("sevenroom", None) => Ok(EnvSpec::SevenRoom),
            ("toymrp", None) => Ok(EnvSpec::ToyMrp),
            _ => Err(Error::Config(format!("unknown environment '{s}'"))),
        }
    }
}

impl Serialize for EnvSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EnvSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
