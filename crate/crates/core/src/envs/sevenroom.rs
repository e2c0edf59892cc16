use ndarray::{Array1, Array2, Array3};
use rand::{Rng, RngCore};

use super::{Environment, Step};
use crate::error::Result;
use crate::mdp::TabularMdp;

const ROOMS: usize = 7;
const ROOM: usize = 5;
const HEIGHT: usize = ROOM;
const WIDTH: usize = ROOMS * ROOM + ROOMS - 1;
const DOOR_ROW: usize = ROOM / 2;
const HORIZON: usize = 40;
const SUCCESS: f64 = 0.95;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const UP: usize = 2;
pub const DOWN: usize = 3;

/// Seven 5x5 rooms in a row, joined by one door cell in the middle of each shared wall.
///
/// The intended move succeeds with probability 0.95 (a move into a wall leaves the agent in
/// place); otherwise the agent moves to a uniformly chosen neighboring cell. Rewards depend on
/// the occupied cell: 0.01 at the start (center of the middle room), 0.1 at the center of the
/// left-most room and 1 at the center of the right-most room, which is absorbing.
#[derive(Debug, Clone)]
pub struct SevenRoom {
    cells: Vec<(usize, usize)>,
    index: Vec<Option<usize>>,
    dynamics: Vec<Vec<(usize, f64)>>,
    start: usize,
    goal: usize,
    small: usize,
}

impl Default for SevenRoom {
    fn default() -> Self {
        Self::new()
    }
}

impl SevenRoom {
    pub fn new() -> Self {
        let mut cells = Vec::new();
        let mut index = vec![None; HEIGHT * WIDTH];
        for row in 0..HEIGHT {
            for col in 0..WIDTH {
                let wall = col % (ROOM + 1) == ROOM;
                if !wall || row == DOOR_ROW {
                    index[row * WIDTH + col] = Some(cells.len());
                    cells.push((row, col));
                }
            }
        }
        let center = |room: usize| index[DOOR_ROW * WIDTH + room * (ROOM + 1) + ROOM / 2].unwrap();
        let (start, goal, small) = (center(ROOMS / 2), center(ROOMS - 1), center(0));
        let mut env = Self {
            cells,
            index,
            dynamics: Vec::new(),
            start,
            goal,
            small,
        };
        env.dynamics = (0..env.cells.len())
            .flat_map(|s| (0..4).map(move |a| (s, a)))
            .map(|(s, a)| env.distribution(s, a))
            .collect();
        env
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn small_reward_state(&self) -> usize {
        self.small
    }

    pub fn cell(&self, state: usize) -> (usize, usize) {
        self.cells[state]
    }

    pub fn state_at(&self, row: usize, col: usize) -> Option<usize> {
        if row < HEIGHT && col < WIDTH {
            self.index[row * WIDTH + col]
        } else {
            None
        }
    }

    fn moved(&self, state: usize, action: usize) -> Option<usize> {
        let (row, col) = self.cells[state];
        let (r, c) = match action {
            LEFT => (row as isize, col as isize - 1),
            RIGHT => (row as isize, col as isize + 1),
            UP => (row as isize - 1, col as isize),
            DOWN => (row as isize + 1, col as isize),
            _ => return None,
        };
        if r < 0 || c < 0 {
            return None;
        }
        self.state_at(r as usize, c as usize)
    }

    pub fn neighbors(&self, state: usize) -> Vec<usize> {
        (0..4).filter_map(|a| self.moved(state, a)).collect()
    }

    fn cell_reward(&self, state: usize) -> f64 {
        if state == self.goal {
            1.0
        } else if state == self.small {
            0.1
        } else if state == self.start {
            0.01
        } else {
            0.0
        }
    }

    fn distribution(&self, state: usize, action: usize) -> Vec<(usize, f64)> {
        if state == self.goal {
            return vec![(state, 1.0)];
        }
        let mut probs = vec![(self.moved(state, action).unwrap_or(state), SUCCESS)];
        let nbrs = self.neighbors(state);
        let slip = (1.0 - SUCCESS) / nbrs.len() as f64;
        for n in nbrs {
            match probs.iter_mut().find(|(s, _)| *s == n) {
                Some(entry) => entry.1 += slip,
                None => probs.push((n, slip)),
            }
        }
        probs
    }
}

impl Environment for SevenRoom {
    fn id(&self) -> String {
        "sevenroom".into()
    }

    fn num_states(&self) -> usize {
        self.cells.len()
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn initial_dist(&self) -> Array1<f64> {
        let mut rho = Array1::zeros(self.num_states());
        rho[self.start] = 1.0;
        rho
    }

    fn reset(&self, _rng: &mut dyn RngCore) -> usize {
        self.start
    }

    fn step(&self, state: usize, action: usize, rng: &mut dyn RngCore) -> Step {
        let dist = &self.dynamics[state * 4 + action];
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next_state = dist[dist.len() - 1].0;
        for &(s, p) in dist {
            acc += p;
            if x < acc {
                next_state = s;
                break;
            }
        }
        Step {
            next_state,
            reward: self.cell_reward(state),
            done: false,
        }
    }

    fn true_mdp(&self, discount: f64) -> Result<TabularMdp> {
        let n = self.num_states();
        let mut p = Array3::zeros((n + 1, 4, n + 1));
        let mut r = Array2::zeros((n + 1, 4));
        for s in 0..n {
            for a in 0..4 {
                for &(s2, prob) in &self.dynamics[s * 4 + a] {
                    p[[s, a, s2]] = prob;
                }
                r[[s, a]] = self.cell_reward(s);
            }
        }
        let mut terminal = vec![false; n + 1];
        terminal[n] = true;
        let mut rho = Array1::zeros(n + 1);
        rho[self.start] = 1.0;
        TabularMdp::new(p, r, discount, rho, terminal)
    }

    fn is_goal(&self, state: usize, _action: usize, _next_state: usize) -> bool {
        state == self.goal
    }
}
