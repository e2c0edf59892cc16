use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AgentSpec, ExperimentConfig};
use crate::envs::{optimal_return, Environment};
use crate::error::Result;
use crate::exploration::{psrl_policy, ucb_policy_with, ExplorationConfig};
use crate::mdp::{finite_horizon_return, Policy, TabularMdp};
use crate::posterior::{MdpPosterior, TransitionRecord};

/// Metrics of one episode of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    /// 1-based.
    pub episode: usize,
    /// Sampled undiscounted return of the rollout.
    pub episode_return: f64,
    /// Optimal expected return minus the deployed policy's expected return.
    pub regret: f64,
    pub cum_regret: f64,
    pub reward_found: bool,
    pub agent: String,
    pub estimator: String,
    pub env: String,
    pub wall_ms: f64,
}

/// Independent random streams for one seed.
pub struct SeedStreams {
    pub env: ChaCha8Rng,
    pub sampling: ChaCha8Rng,
    pub ties: ChaCha8Rng,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            rng
        };
        Self {
            env: stream(0),
            sampling: stream(1),
            ties: stream(2),
        }
    }
}

enum Agent {
    Ucb(ExplorationConfig),
    Psrl(usize),
}

impl Agent {
    fn policy(
        &self,
        posterior: &MdpPosterior,
        previous: Option<&Policy>,
        streams: &mut SeedStreams,
    ) -> Result<Policy> {
        match self {
            Agent::Ucb(config) => Ok(ucb_policy_with(
                posterior,
                config,
                previous,
                &mut streams.sampling,
                &mut streams.ties,
            )?
            .policy),
            Agent::Psrl(iters) => psrl_policy(posterior, *iters, &mut streams.sampling),
        }
    }
}

fn act(policy: &Policy, state: usize, rng: &mut dyn RngCore) -> usize {
    let probs = policy.probs();
    let row = probs.row(state);
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, &p) in row.iter().enumerate() {
        acc += p;
        if x < acc {
            return a;
        }
    }
    row.len() - 1
}

/// Runs every seed of `config` in order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let env = config.env.build()?;
    let truth = env.true_mdp(1.0)?;
    let best = optimal_return(env.as_ref())?;
    let mut records = Vec::with_capacity(config.episodes * config.seeds.len());
    for &seed in &config.seeds {
        records.extend(run_seed(config, env.as_ref(), &truth, best, seed)?);
    }
    Ok(records)
}

/// One seed of `config` against a prebuilt environment, its undiscounted true MDP and its
/// optimal episode return.
pub fn run_seed(
    config: &ExperimentConfig,
    env: &dyn Environment,
    truth: &TabularMdp,
    best: f64,
    seed: u64,
) -> Result<Vec<RunRecord>> {
    let posterior =
        MdpPosterior::new(env.num_states(), env.num_actions(), config.gamma, &env.initial_dist())?;
    run_seed_from(config, env, truth, best, seed, posterior)
}

/// [`run_seed`] starting from a given posterior instead of the prior.
pub fn run_seed_from(
    config: &ExperimentConfig,
    env: &dyn Environment,
    truth: &TabularMdp,
    best: f64,
    seed: u64,
    mut posterior: MdpPosterior,
) -> Result<Vec<RunRecord>> {
    let agent = match &config.agent {
        AgentSpec::Ucb { .. } => Agent::Ucb(config.agent.exploration(&config.env).unwrap()),
        AgentSpec::Psrl { max_policy_iters } => Agent::Psrl(*max_policy_iters),
    };
    let agent_name = config.agent.name().to_string();
    let estimator = config.agent.estimator_id();
    let env_id = env.id();
    let repeat = config.repeat_count();
    let horizon = env.horizon();

    let mut streams = SeedStreams::new(seed);
    let mut policy = agent.policy(&posterior, None, &mut streams)?;
    let mut cum_regret = 0.0;
    let mut records = Vec::with_capacity(config.episodes);

    for episode in 1..=config.episodes {
        let started = Instant::now();
        // A stationary policy cannot beat the finite-horizon optimum; clamp rounding only.
        let regret = (best - finite_horizon_return(truth, &policy, horizon)?).max(0.0);
        cum_regret += regret;

        let mut state = env.reset(&mut streams.env);
        let mut episode_return = 0.0;
        let mut reward_found = false;
        for _ in 0..horizon {
            let action = act(&policy, state, &mut streams.env);
            let step = env.step(state, action, &mut streams.env);
            episode_return += step.reward;
            reward_found |= env.is_goal(state, action, step.next_state);
            posterior.update(
                &TransitionRecord {
                    state,
                    action,
                    reward: step.reward,
                    next_state: step.next_state,
                    done: step.done,
                },
                repeat,
            )?;
            if step.done {
                break;
            }
            state = step.next_state;
        }
        policy = agent.policy(&posterior, Some(&policy), &mut streams)?;

        records.push(RunRecord {
            seed,
            episode,
            episode_return,
            regret,
            cum_regret,
            reward_found,
            agent: agent_name.clone(),
            estimator: estimator.clone(),
            env: env_id.clone(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(records)
}
