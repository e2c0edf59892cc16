//! Conjugate posterior over tabular MDPs.
//!
//! Transitions carry a Dirichlet belief per state-action pair and mean rewards a Normal
//! belief with known unit observation noise. The modeled state space has one synthetic
//! absorbing terminal state appended after the environment states; episode ends are
//! recorded as transitions into it.

use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Version tag written into posterior snapshots.
pub const SNAPSHOT_VERSION: u32 = 1;

/// Dirichlet pseudo-counts `alpha[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPosterior {
    alpha: Array3<f64>,
}

impl DirichletPosterior {
    /// Symmetric prior with concentration `1/sqrt(S)` per entry.
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        let alpha0 = 1.0 / (num_states as f64).sqrt();
        Self {
            alpha: Array3::from_elem((num_states, num_actions, num_states), alpha0),
        }
    }

    pub fn alpha(&self) -> &Array3<f64> {
        &self.alpha
    }

    pub fn prior_concentration(&self) -> f64 {
        1.0 / (self.alpha.dim().0 as f64).sqrt()
    }
}

/// Normal belief over mean rewards with unit observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalRewardPosterior {
    mean: Array2<f64>,
    precision: Array2<f64>,
}

impl NormalRewardPosterior {
    /// Standard normal prior on every mean reward.
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            mean: Array2::zeros((num_states, num_actions)),
            precision: Array2::ones((num_states, num_actions)),
        }
    }

    pub fn mean(&self) -> &Array2<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &Array2<f64> {
        &self.precision
    }
}

/// One observed environment transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
}

/// Joint posterior over transition and reward functions.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpPosterior {
    transitions: DirichletPosterior,
    rewards: NormalRewardPosterior,
    discount: f64,
    initial_dist: Array1<f64>,
    terminal_state: usize,
}

impl MdpPosterior {
    /// Prior over MDPs with `num_env_states` environment states plus one terminal state.
    ///
    /// `initial_dist` is over environment states only.
    pub fn new(
        num_env_states: usize,
        num_actions: usize,
        discount: f64,
        initial_dist: &Array1<f64>,
    ) -> Result<Self> {
        if num_env_states == 0 || num_actions == 0 {
            return Err(Error::Dimension("posterior needs states and actions".into()));
        }
        if initial_dist.len() != num_env_states {
            return Err(Error::Dimension(format!(
                "initial distribution has {} entries for {} states",
                initial_dist.len(),
                num_env_states
            )));
        }
        let s_model = num_env_states + 1;
        let mut rho = Array1::zeros(s_model);
        rho.slice_mut(ndarray::s![..num_env_states]).assign(initial_dist);
        Ok(Self {
            transitions: DirichletPosterior::new(s_model, num_actions),
            rewards: NormalRewardPosterior::new(s_model, num_actions),
            discount,
            initial_dist: rho,
            terminal_state: num_env_states,
        })
    }

    /// Number of modeled states, including the terminal state.
    pub fn num_states(&self) -> usize {
        self.transitions.alpha.dim().0
    }

    pub fn num_actions(&self) -> usize {
        self.transitions.alpha.dim().1
    }

    pub fn terminal_state(&self) -> usize {
        self.terminal_state
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transitions(&self) -> &DirichletPosterior {
        &self.transitions
    }

    pub fn rewards(&self) -> &NormalRewardPosterior {
        &self.rewards
    }

    fn terminal_mask(&self) -> Vec<bool> {
        (0..self.num_states()).map(|s| s == self.terminal_state).collect()
    }

    /// Conjugate update with `rec` observed `repeats` times.
    pub fn update(&mut self, rec: &TransitionRecord, repeats: usize) -> Result<()> {
        if repeats == 0 {
            return Err(Error::Config("repeat count must be at least 1".into()));
        }
        let s_n = self.num_states();
        let a_n = self.num_actions();
        if rec.state >= s_n || rec.state == self.terminal_state {
            return Err(Error::Index {
                what: "state",
                index: rec.state,
                limit: self.terminal_state,
            });
        }
        if rec.action >= a_n {
            return Err(Error::Index {
                what: "action",
                index: rec.action,
                limit: a_n,
            });
        }
        let next = if rec.done {
            self.terminal_state
        } else if rec.next_state < s_n {
            rec.next_state
        } else {
            return Err(Error::Index {
                what: "next_state",
                index: rec.next_state,
                limit: s_n,
            });
        };
        if !rec.reward.is_finite() {
            return Err(Error::InvalidDistribution(format!(
                "non-finite reward {}",
                rec.reward
            )));
        }
        let k = repeats as f64;
        self.transitions.alpha[[rec.state, rec.action, next]] += k;
        let kappa = self.rewards.precision[[rec.state, rec.action]];
        let mu = self.rewards.mean[[rec.state, rec.action]];
        let kappa_new = kappa + k;
        self.rewards.mean[[rec.state, rec.action]] = (kappa * mu + k * rec.reward) / kappa_new;
        self.rewards.precision[[rec.state, rec.action]] = kappa_new;
        Ok(())
    }

    /// Draws one MDP: Dirichlet transition rows and Normal mean rewards, independently.
    pub fn sample_mdp<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TabularMdp> {
        let s_n = self.num_states();
        let a_n = self.num_actions();
        let alpha0 = self.transitions.prior_concentration();
        let prior_gamma = Gamma::new(alpha0, 1.0)
            .map_err(|e| Error::InvalidDistribution(format!("gamma({alpha0}): {e}")))?;
        let mut transition = Array3::<f64>::zeros((s_n, a_n, s_n));
        let mut reward = Array2::<f64>::zeros((s_n, a_n));
        for s in 0..s_n {
            if s == self.terminal_state {
                continue;
            }
            for a in 0..a_n {
                let alpha = self.transitions.alpha.slice(ndarray::s![s, a, ..]);
                let mut row = transition.slice_mut(ndarray::s![s, a, ..]);
                loop {
                    let mut total = 0.0;
                    for (x, &shape) in row.iter_mut().zip(alpha.iter()) {
                        *x = if shape == alpha0 {
                            prior_gamma.sample(rng)
                        } else {
                            Gamma::new(shape, 1.0)
                                .map_err(|e| {
                                    Error::InvalidDistribution(format!("gamma({shape}): {e}"))
                                })?
                                .sample(rng)
                        };
                        total += *x;
                    }
                    // All-zero rows only happen through underflow; redraw them.
                    if total > 0.0 && total.is_finite() {
                        row.mapv_inplace(|x| x / total);
                        break;
                    }
                }
                let z: f64 = StandardNormal.sample(rng);
                reward[[s, a]] = self.rewards.mean[[s, a]]
                    + z / self.rewards.precision[[s, a]].sqrt();
            }
        }
        TabularMdp::new(
            transition,
            reward,
            self.discount,
            self.initial_dist.clone(),
            self.terminal_mask(),
        )
    }

    /// The posterior-mean MDP: expected transition rows and mean rewards.
    pub fn mean_mdp(&self) -> Result<TabularMdp> {
        let s_n = self.num_states();
        let a_n = self.num_actions();
        let mut transition = self.transitions.alpha.clone();
        for s in 0..s_n {
            for a in 0..a_n {
                let mut row = transition.slice_mut(ndarray::s![s, a, ..]);
                let total = row.sum();
                row.mapv_inplace(|x| x / total);
            }
        }
        TabularMdp::new(
            transition,
            self.rewards.mean.clone(),
            self.discount,
            self.initial_dist.clone(),
            self.terminal_mask(),
        )
    }

    /// Posterior variance of each mean reward, `1/kappa`; zero at the terminal state.
    pub fn reward_variance(&self) -> Array2<f64> {
        let mut var = self.rewards.precision.mapv(|k| 1.0 / k);
        var.row_mut(self.terminal_state).fill(0.0);
        var
    }

    pub fn to_snapshot(&self) -> PosteriorSnapshot {
        PosteriorSnapshot {
            schema_version: SNAPSHOT_VERSION,
            num_states: self.num_states(),
            num_actions: self.num_actions(),
            alpha: self.transitions.alpha.iter().copied().collect(),
            reward_mean: self.rewards.mean.iter().copied().collect(),
            reward_precision: self.rewards.precision.iter().copied().collect(),
            discount: self.discount,
            initial_dist: self.initial_dist.to_vec(),
            terminal_state: self.terminal_state,
        }
    }

    pub fn from_snapshot(snap: PosteriorSnapshot) -> Result<Self> {
        if snap.schema_version != SNAPSHOT_VERSION {
            return Err(Error::Config(format!(
                "unsupported posterior snapshot version {}",
                snap.schema_version
            )));
        }
        let (s_n, a_n) = (snap.num_states, snap.num_actions);
        let shape_err = |e: ndarray::ShapeError| Error::Dimension(format!("snapshot: {e}"));
        let alpha = Array3::from_shape_vec((s_n, a_n, s_n), snap.alpha).map_err(shape_err)?;
        let mean = Array2::from_shape_vec((s_n, a_n), snap.reward_mean).map_err(shape_err)?;
        let precision =
            Array2::from_shape_vec((s_n, a_n), snap.reward_precision).map_err(shape_err)?;
        if snap.initial_dist.len() != s_n || snap.terminal_state >= s_n {
            return Err(Error::Dimension("snapshot initial distribution or terminal".into()));
        }
        if alpha.iter().any(|&x| !(x > 0.0)) || precision.iter().any(|&k| !(k >= 1.0)) {
            return Err(Error::InvalidDistribution(
                "snapshot has non-positive pseudo-counts".into(),
            ));
        }
        Ok(Self {
            transitions: DirichletPosterior { alpha },
            rewards: NormalRewardPosterior { mean, precision },
            discount: snap.discount,
            initial_dist: Array1::from(snap.initial_dist),
            terminal_state: snap.terminal_state,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_snapshot())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_snapshot(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Serializable posterior state, flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    pub schema_version: u32,
    pub num_states: usize,
    pub num_actions: usize,
    pub alpha: Vec<f64>,
    pub reward_mean: Vec<f64>,
    pub reward_precision: Vec<f64>,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
    pub terminal_state: usize,
}
