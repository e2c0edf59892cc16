use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::exploration::{EnsembleRefresh, ExplorationConfig};
use crate::mdp::DEFAULT_MAX_POLICY_ITERS;
use crate::variance::{Estimator, ExactUbeVariant};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_episodes() -> usize {
    1000
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}
fn default_gamma() -> f64 {
    0.99
}
fn default_lambda() -> f64 {
    1.0
}
fn default_ensemble() -> usize {
    5
}
fn default_iters() -> usize {
    DEFAULT_MAX_POLICY_ITERS
}
fn default_estimator() -> Estimator {
    Estimator::ExactUbe(ExactUbeVariant::Three)
}

/// Learning agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AgentSpec {
    /// Optimistic policy iteration on the posterior mean plus scaled standard deviation.
    Ucb {
        #[serde(default = "default_estimator")]
        estimator: Estimator,
        #[serde(default = "default_lambda")]
        lambda: f64,
        /// Clip floor; the environment's default when absent.
        #[serde(default)]
        u_min: Option<f64>,
        #[serde(default = "default_ensemble")]
        ensemble_size: usize,
        #[serde(default = "default_iters")]
        max_policy_iters: usize,
        #[serde(default)]
        refresh: EnsembleRefresh,
    },
    /// Posterior sampling.
    Psrl {
        #[serde(default = "default_iters")]
        max_policy_iters: usize,
    },
}

impl AgentSpec {
    pub fn ucb(estimator: Estimator) -> Self {
        AgentSpec::Ucb {
            estimator,
            lambda: default_lambda(),
            u_min: None,
            ensemble_size: default_ensemble(),
            max_policy_iters: default_iters(),
            refresh: EnsembleRefresh::default(),
        }
    }

    pub fn psrl() -> Self {
        AgentSpec::Psrl {
            max_policy_iters: default_iters(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentSpec::Ucb { .. } => "ucb",
            AgentSpec::Psrl { .. } => "psrl",
        }
    }

    /// Estimator id, or `none` for agents without one.
    pub fn estimator_id(&self) -> String {
        match self {
            AgentSpec::Ucb { estimator, .. } => estimator.id(),
            AgentSpec::Psrl { .. } => "none".into(),
        }
    }

    /// Exploration settings, filling the clip floor from the environment default.
    pub fn exploration(&self, env: &EnvSpec) -> Option<ExplorationConfig> {
        match *self {
            AgentSpec::Ucb {
                estimator,
                lambda,
                u_min,
                ensemble_size,
                max_policy_iters,
                refresh,
            } => Some(ExplorationConfig {
                lambda,
                ensemble_size,
                estimator,
                u_min: u_min.unwrap_or_else(|| default_u_min(env)),
                max_policy_iters,
                refresh,
            }),
            AgentSpec::Psrl { .. } => None,
        }
    }
}

/// Clip floor per environment: slightly negative on DeepSea, zero elsewhere.
pub fn default_u_min(env: &EnvSpec) -> f64 {
    match env {
        EnvSpec::DeepSea { .. } => -0.05,
        _ => 0.0,
    }
}

/// Transition repeats per environment: `L` on DeepSea, 1 elsewhere.
pub fn default_repeat(env: &EnvSpec) -> usize {
    match env {
        EnvSpec::DeepSea { size } => *size,
        _ => 1,
    }
}

/// One experiment: an agent on an environment over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub env: EnvSpec,
    pub agent: AgentSpec,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Times each observed transition is counted; the environment's default when absent.
    #[serde(default)]
    pub repeat: Option<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub plot: bool,
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, agent: AgentSpec) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            env,
            agent,
            episodes: default_episodes(),
            seeds: default_seeds(),
            repeat: None,
            gamma: default_gamma(),
            out: None,
            plot: false,
        }
    }

    pub fn repeat_count(&self) -> usize {
        self.repeat.unwrap_or_else(|| default_repeat(&self.env))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} is not supported (expected {})",
                self.schema_version, CONFIG_SCHEMA_VERSION
            )));
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.repeat == Some(0) {
            return Err(Error::Config("repeat must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        match &self.agent {
            AgentSpec::Psrl { max_policy_iters } if *max_policy_iters == 0 => {
                return Err(Error::Config("max_policy_iters must be >= 1".into()));
            }
            AgentSpec::Psrl { .. } => {}
            AgentSpec::Ucb { .. } => self.agent.exploration(&self.env).unwrap().validate()?,
        }
        self.env.build().map(|_| ())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_gets_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "env = \"deepsea:L=10\"\n[agent]\nkind = \"ucb\"\nestimator = \"pombu\"\n",
        )
        .unwrap();
        assert_eq!(c.episodes, 1000);
        assert_eq!(c.seeds.len(), 5);
        assert_eq!(c.repeat_count(), 10);
        let x = c.agent.exploration(&c.env).unwrap();
        assert_eq!(x.u_min, -0.05);
        assert_eq!(x.estimator, Estimator::Pombu);
        assert_eq!(x.ensemble_size, 5);
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::new(EnvSpec::SevenRoom, AgentSpec::psrl());
        c.seeds = vec![3, 4];
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "schema_version = 2\nenv = \"sevenroom\"\n[agent]\nkind = \"psrl\"\n",
            "env = \"sevenroom\"\nepisodes = 0\n[agent]\nkind = \"psrl\"\n",
            "env = \"sevenroom\"\nseeds = []\n[agent]\nkind = \"psrl\"\n",
            "env = \"toymrp\"\n[agent]\nkind = \"psrl\"\n",
            "env = \"sevenroom\"\n[agent]\nkind = \"ucb\"\nestimator = \"magic\"\n",
            "env = \"sevenroom\"\n[agent]\nkind = \"ucb\"\nensemble_size = 1\n",
            "env = \"sevenroom\"\ncolour = 1\n[agent]\nkind = \"psrl\"\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }
}
