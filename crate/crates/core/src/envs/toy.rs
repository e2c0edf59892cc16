use std::fmt;

use ndarray::{Array1, Array2, Array3};

use crate::error::Result;
use crate::mdp::{Policy, TabularMdp};
use crate::variance::{
    exact_ube_rewards, gap_values, pombu_rewards, solve_ube, EnumeratedPosterior, ExactUbeVariant,
};

pub const S0: usize = 0;
pub const S1: usize = 1;
pub const S2: usize = 2;
pub const S3: usize = 3;
pub const TERMINAL: usize = 4;

const DELTAS: [f64; 2] = [0.7, 0.6];
const BETAS: [f64; 2] = [0.5, 0.4];

/// Four-state reward process with an uncertain pair of branching probabilities.
///
/// Undiscounted. From `s0` the process moves to `s2` with probability `delta`, else to `s1`.
/// From `s2` it moves to `s3` with probability `beta`, else it terminates. `s1` and `s3`
/// terminate. Rewards are collected on leaving a state: 0.1 in `s1`, 100 in `s3`, 0 elsewhere.
/// The posterior is uniform over `delta in {0.7, 0.6}` and `beta in {0.5, 0.4}`; the two
/// parameters live in different states, so the transitions are independent across states.
#[derive(Debug, Clone)]
pub struct ToyMrpFixture {
    pub params: Vec<(f64, f64)>,
    pub members: Vec<TabularMdp>,
    pub weights: Vec<f64>,
}

/// Builds the reward process for one `(delta, beta)`.
pub fn toy_mrp(delta: f64, beta: f64) -> TabularMdp {
    let mut p = Array3::zeros((5, 1, 5));
    p[[S0, 0, S2]] = delta;
    p[[S0, 0, S1]] = 1.0 - delta;
    p[[S2, 0, S3]] = beta;
    p[[S2, 0, TERMINAL]] = 1.0 - beta;
    p[[S1, 0, TERMINAL]] = 1.0;
    p[[S3, 0, TERMINAL]] = 1.0;
    p[[TERMINAL, 0, TERMINAL]] = 1.0;
    let mut r = Array2::zeros((5, 1));
    r[[S1, 0]] = 0.1;
    r[[S3, 0]] = 100.0;
    let mut rho = Array1::zeros(5);
    rho[S0] = 1.0;
    TabularMdp::new(p, r, 1.0, rho, vec![false, false, false, false, true])
        .expect("toy reward process is well formed")
}

pub fn toy_mrp_fixture() -> ToyMrpFixture {
    let params: Vec<(f64, f64)> = DELTAS
        .iter()
        .flat_map(|&d| BETAS.iter().map(move |&b| (d, b)))
        .collect();
    let members = params.iter().map(|&(d, b)| toy_mrp(d, b)).collect();
    ToyMrpFixture {
        weights: vec![0.25; params.len()],
        params,
        members,
    }
}

/// Uncertainty quantities of one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyRow {
    /// Exact local uncertainty reward.
    pub u: f64,
    /// Upper-bound local uncertainty reward.
    pub w: f64,
    /// Gap `w - u`.
    pub g: f64,
    /// Solution of the upper-bound recursion.
    pub upper: f64,
    /// Solution of the exact recursion, the posterior variance of the value.
    pub exact: f64,
}

#[derive(Debug, Clone)]
pub struct ToyTable {
    /// Rows for `s0..s3`.
    pub rows: Vec<ToyRow>,
}

impl ToyMrpFixture {
    pub fn posterior(&self) -> Result<EnumeratedPosterior> {
        EnumeratedPosterior::new(self.members.clone(), self.weights.clone())
    }

    /// Every uncertainty quantity by exact enumeration of the posterior.
    pub fn table(&self) -> Result<ToyTable> {
        let post = self.posterior()?;
        let policy = Policy::uniform(5, 1);
        let ens = post.ensemble(&policy)?;
        let mean = post.mean_mdp()?;
        let u = exact_ube_rewards(&ens, &mean, &policy, ExactUbeVariant::Three)?;
        let w = pombu_rewards(&ens, &policy)?;
        let g = gap_values(&ens, &policy)?;
        let rv = post.reward_variance();
        let exact = solve_ube(&mean, &policy, &u, rv.view())?;
        let upper = solve_ube(&mean, &policy, &w, rv.view())?;
        let rows = (S0..=S3)
            .map(|s| ToyRow {
                u: u.values[[s, 0]],
                w: w.values[[s, 0]],
                g: g.0[[s, 0]],
                upper: upper.0[[s, 0]],
                exact: exact.0[[s, 0]],
            })
            .collect();
        Ok(ToyTable { rows })
    }
}

impl fmt::Display for ToyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6}{:>10}{:>10}{:>10}{:>10}{:>10}", "state", "u", "w", "g", "W", "U")?;
        for (s, r) in self.rows.iter().enumerate() {
            writeln!(
                f,
                "s{:<5}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
                s, r.u, r.w, r.g, r.upper, r.exact
            )?;
        }
        Ok(())
    }
}
