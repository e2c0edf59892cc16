//! Optimistic policy optimization and posterior sampling.

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{greedy_improvement, policy_iteration, Policy, DEFAULT_MAX_POLICY_ITERS};
use crate::posterior::MdpPosterior;
use crate::variance::{build_ensemble, qvariance_cached, sample_members, Estimator, ExactUbeVariant, MdpEnsemble};

/// When the posterior samples behind `Q_mean` and `U` are redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleRefresh {
    /// Fresh samples at every policy-improvement step.
    #[default]
    PerStep,
    /// One set of samples per call, re-evaluated under each candidate policy.
    PerEpisode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationConfig {
    /// Exploration gain on the standard deviation.
    pub lambda: f64,
    pub ensemble_size: usize,
    pub estimator: Estimator,
    /// Floor applied to local uncertainty rewards.
    pub u_min: f64,
    pub max_policy_iters: usize,
    pub refresh: EnsembleRefresh,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            ensemble_size: 5,
            estimator: Estimator::ExactUbe(ExactUbeVariant::Three),
            u_min: 0.0,
            max_policy_iters: DEFAULT_MAX_POLICY_ITERS,
            refresh: EnsembleRefresh::PerStep,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config(format!(
                "ensemble size must be >= 2, got {}",
                self.ensemble_size
            )));
        }
        if self.max_policy_iters == 0 {
            return Err(Error::Config("max_policy_iters must be >= 1".into()));
        }
        if self.u_min.is_nan() {
            return Err(Error::Config("u_min is NaN".into()));
        }
        Ok(())
    }
}

/// `Q_mean + lambda * sqrt(max(U, 0))`.
pub fn optimistic_values(q_mean: ArrayView2<'_, f64>, u: ArrayView2<'_, f64>, lambda: f64) -> Array2<f64> {
    let mut out = q_mean.to_owned();
    Zip::from(&mut out).and(u).for_each(|q, &v| *q += lambda * v.max(0.0).sqrt());
    out
}

#[derive(Debug, Clone)]
pub struct UcbResult {
    pub policy: Policy,
    /// Number of improvement steps taken.
    pub iterations: usize,
    pub converged: bool,
}

/// Optimistic policy iteration on `Q_mean + lambda * sqrt(U)`.
///
/// Starts from `warm_start` if given, else the uniform policy. Each step estimates `Q_mean`
/// and `U` for the current policy from an ensemble of posterior samples and takes a greedy
/// step, keeping current actions on ties. Stops when the policy is unchanged or after
/// `max_policy_iters` steps. With [`EnsembleRefresh::PerEpisode`] a cycle of policies is
/// detected and the policy the cycle reaches at the cap is returned directly.
pub fn ucb_policy_with<R: Rng + ?Sized, T: Rng + ?Sized>(
    posterior: &MdpPosterior,
    config: &ExplorationConfig,
    warm_start: Option<&Policy>,
    sampling_rng: &mut R,
    tie_rng: &mut T,
) -> Result<UcbResult> {
    config.validate()?;
    let mean = posterior.mean_mdp()?;
    let reward_var = posterior.reward_variance();
    let mut policy = match warm_start {
        Some(p) => {
            mean.check_policy(p)?;
            p.clone()
        }
        None => Policy::uniform(mean.num_states(), mean.num_actions()),
    };
    let mut frozen: Option<MdpEnsemble> = None;
    let mut ube_system = None;
    let mut history: Vec<Policy> = Vec::new();
    let mut iterations = 0;
    while iterations < config.max_policy_iters {
        iterations += 1;
        let ensemble = match (config.refresh, frozen.take()) {
            (EnsembleRefresh::PerStep, _) => {
                build_ensemble(posterior, &policy, config.ensemble_size, sampling_rng)?
            }
            (EnsembleRefresh::PerEpisode, Some(ens)) => ens.reevaluate(&policy)?,
            (EnsembleRefresh::PerEpisode, None) => MdpEnsemble::from_samples(
                sample_members(posterior, config.ensemble_size, sampling_rng)?,
                &policy,
            )?,
        };
        let q_mean = ensemble.q_mean().values();
        let optimistic = if config.lambda == 0.0 {
            q_mean.to_owned()
        } else {
            let u = qvariance_cached(
                &ensemble,
                &mean,
                reward_var.view(),
                &policy,
                config.estimator,
                config.u_min,
                &mut ube_system,
            )?;
            optimistic_values(q_mean, u.values(), config.lambda)
        };
        let next = greedy_improvement(optimistic.view(), Some(&policy), tie_rng);
        if config.refresh == EnsembleRefresh::PerEpisode {
            frozen = Some(ensemble);
        }
        if next == policy {
            return Ok(UcbResult {
                policy,
                iterations,
                converged: true,
            });
        }
        if config.refresh == EnsembleRefresh::PerEpisode {
            // With a frozen ensemble the improvement step is a fixed map, so a revisited
            // policy repeats with a fixed period until the cap.
            history.push(policy);
            if let Some(j) = history.iter().position(|p| *p == next) {
                let period = history.len() - j;
                let at_cap = j + (config.max_policy_iters - j) % period;
                return Ok(UcbResult {
                    policy: history.swap_remove(at_cap),
                    iterations: config.max_policy_iters,
                    converged: false,
                });
            }
        }
        policy = next;
    }
    Ok(UcbResult {
        policy,
        iterations,
        converged: false,
    })
}

/// [`ucb_policy_with`] from the uniform policy, with tie-breaking drawn from a stream
/// seeded by `rng`.
pub fn ucb_policy<R: Rng + ?Sized>(
    posterior: &MdpPosterior,
    config: &ExplorationConfig,
    rng: &mut R,
) -> Result<Policy> {
    let mut tie_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    Ok(ucb_policy_with(posterior, config, None, rng, &mut tie_rng)?.policy)
}

/// Posterior sampling: the optimal policy of one sampled MDP.
pub fn psrl_policy<R: Rng + ?Sized>(
    posterior: &MdpPosterior,
    max_policy_iters: usize,
    rng: &mut R,
) -> Result<Policy> {
    let sample = posterior.sample_mdp(rng)?;
    Ok(policy_iteration(&sample, max_policy_iters, rng)?.policy)
}
