use ndarray::{Array1, Array2, Array3};
use rand::RngCore;

use super::{Environment, Step};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Deterministic `L x L` DeepSea.
///
/// The agent starts at the top-left cell and descends one row per step, moving one column
/// left or right (clamped at the edges). Moving right costs `0.01 / L`. Moving right from the
/// bottom-right cell also pays 1. Every episode lasts exactly `L` steps.
#[derive(Debug, Clone)]
pub struct DeepSea {
    size: usize,
}

impl DeepSea {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("deepsea size must be >= 2, got {size}")));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn action_cost(&self) -> f64 {
        0.01 / self.size as f64
    }

    pub fn state(&self, row: usize, col: usize) -> usize {
        row * self.size + col
    }

    pub fn cell(&self, state: usize) -> (usize, usize) {
        (state / self.size, state % self.size)
    }

    fn transition(&self, state: usize, action: usize) -> (usize, f64, bool) {
        let l = self.size;
        let (row, col) = self.cell(state);
        let (col2, mut reward) = if action == RIGHT {
            ((col + 1).min(l - 1), -self.action_cost())
        } else {
            (col.saturating_sub(1), 0.0)
        };
        if row == l - 1 {
            if action == RIGHT && col == l - 1 {
                reward += 1.0;
            }
            (l * l, reward, true)
        } else {
            (self.state(row + 1, col2), reward, false)
        }
    }
}

impl Environment for DeepSea {
    fn id(&self) -> String {
        format!("deepsea:L={}", self.size)
    }

    fn num_states(&self) -> usize {
        self.size * self.size
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.size
    }

    fn initial_dist(&self) -> Array1<f64> {
        let mut rho = Array1::zeros(self.num_states());
        rho[0] = 1.0;
        rho
    }

    fn reset(&self, _rng: &mut dyn RngCore) -> usize {
        0
    }

    fn step(&self, state: usize, action: usize, _rng: &mut dyn RngCore) -> Step {
        let (next_state, reward, done) = self.transition(state, action);
        Step { next_state, reward, done }
    }

    fn true_mdp(&self, discount: f64) -> Result<TabularMdp> {
        let n = self.num_states();
        let mut p = Array3::zeros((n + 1, 2, n + 1));
        let mut r = Array2::zeros((n + 1, 2));
        for s in 0..n {
            for a in 0..2 {
                let (s2, reward, _) = self.transition(s, a);
                p[[s, a, s2]] = 1.0;
                r[[s, a]] = reward;
            }
        }
        let mut terminal = vec![false; n + 1];
        terminal[n] = true;
        let mut rho = Array1::zeros(n + 1);
        rho[0] = 1.0;
        TabularMdp::new(p, r, discount, rho, terminal)
    }

    fn is_goal(&self, state: usize, action: usize, _next_state: usize) -> bool {
        action == RIGHT && state == self.num_states() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{finite_horizon_return, Policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant(env: &DeepSea, action: usize) -> f64 {
        let mdp = env.true_mdp(1.0).unwrap();
        let policy = Policy::deterministic(&vec![action; mdp.num_states()], 2).unwrap();
        finite_horizon_return(&mdp, &policy, env.horizon()).unwrap()
    }

    #[test]
    fn constant_policy_returns() {
        for l in [2, 5, 10, 30] {
            let env = DeepSea::new(l).unwrap();
            assert!((constant(&env, RIGHT) - 0.99).abs() < 1e-12);
            assert_eq!(constant(&env, LEFT), 0.0);
        }
    }

    #[test]
    fn rollout_descends_one_row_per_step() {
        let env = DeepSea::new(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = env.reset(&mut rng);
        for t in 0..6 {
            assert_eq!(env.cell(s).0, t);
            let step = env.step(s, RIGHT, &mut rng);
            assert_eq!(step.done, t == 5);
            if t == 5 {
                assert!(env.is_goal(s, RIGHT, step.next_state));
                assert!((step.reward - (1.0 - 0.01 / 6.0)).abs() < 1e-15);
            }
            s = step.next_state;
        }
    }
}
