//! Tabular MDPs, policies and exact policy evaluation.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Probability rows must sum to one within this tolerance.
pub const PROB_TOL: f64 = 1e-9;

/// Actions whose value is within this distance of the best are treated as tied.
pub const TIE_TOL: f64 = 1e-9;

/// Default cap on policy-iteration sweeps.
pub const DEFAULT_MAX_POLICY_ITERS: usize = 40;

/// A fully specified finite MDP.
///
/// Terminal states are absorbing with zero reward; the constructor rewrites their rows so
/// that this always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    transition: Array3<f64>,
    reward: Array2<f64>,
    discount: f64,
    initial_dist: Array1<f64>,
    terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn new(
        mut transition: Array3<f64>,
        mut reward: Array2<f64>,
        discount: f64,
        initial_dist: Array1<f64>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let (s_n, a_n, s_next) = transition.dim();
        if s_n == 0 || a_n == 0 {
            return Err(Error::Dimension("MDP needs at least one state and action".into()));
        }
        if s_next != s_n {
            return Err(Error::Dimension(format!(
                "transition tensor {:?} is not S x A x S",
                transition.dim()
            )));
        }
        if reward.dim() != (s_n, a_n) {
            return Err(Error::Dimension(format!(
                "reward table {:?} vs {} states, {} actions",
                reward.dim(),
                s_n,
                a_n
            )));
        }
        if initial_dist.len() != s_n || terminal.len() != s_n {
            return Err(Error::Dimension(format!(
                "initial distribution {} / terminal mask {} vs {} states",
                initial_dist.len(),
                terminal.len(),
                s_n
            )));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::Config(format!("discount {discount} outside [0, 1]")));
        }
        for (s, &is_terminal) in terminal.iter().enumerate() {
            if is_terminal {
                for a in 0..a_n {
                    let mut row = transition.slice_mut(ndarray::s![s, a, ..]);
                    row.fill(0.0);
                    row[s] = 1.0;
                    reward[[s, a]] = 0.0;
                }
            }
        }
        for s in 0..s_n {
            for a in 0..a_n {
                check_distribution(
                    transition.slice(ndarray::s![s, a, ..]),
                    || format!("transition row ({s}, {a})"),
                )?;
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite reward".into()));
        }
        check_distribution(initial_dist.view(), || "initial distribution".to_string())?;
        Ok(Self {
            transition,
            reward,
            discount,
            initial_dist,
            terminal,
        })
    }

    pub fn num_states(&self) -> usize {
        self.transition.dim().0
    }

    pub fn num_actions(&self) -> usize {
        self.transition.dim().1
    }

    pub fn transition(&self) -> ArrayView3<'_, f64> {
        self.transition.view()
    }

    pub fn reward(&self) -> ArrayView2<'_, f64> {
        self.reward.view()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> ArrayView1<'_, f64> {
        self.initial_dist.view()
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    /// Same dynamics and rewards under a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.transition.clone(),
            self.reward.clone(),
            discount,
            self.initial_dist.clone(),
            self.terminal.clone(),
        )
    }

    /// Same dynamics with a replaced reward table.
    pub fn with_reward(&self, reward: Array2<f64>) -> Result<Self> {
        Self::new(
            self.transition.clone(),
            reward,
            self.discount,
            self.initial_dist.clone(),
            self.terminal.clone(),
        )
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.probs.dim() != (self.num_states(), self.num_actions()) {
            return Err(Error::Dimension(format!(
                "policy {:?} vs MDP with {} states, {} actions",
                policy.probs.dim(),
                self.num_states(),
                self.num_actions()
            )));
        }
        Ok(())
    }
}

fn check_distribution(row: ArrayView1<'_, f64>, what: impl Fn() -> String) -> Result<()> {
    let mut total = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!("{}: entry {p}", what())));
        }
        total += p;
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution(format!("{}: sums to {total}", what())));
    }
    Ok(())
}

/// A stochastic policy `pi[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.axis_iter(Axis(0)).enumerate() {
            check_distribution(row, || format!("policy row {s}"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((num_states, num_actions), 1.0 / num_actions as f64),
        }
    }

    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), num_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::Index {
                    what: "action",
                    index: a,
                    limit: num_actions,
                });
            }
            probs[[s, a]] = 1.0;
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// The chosen action per state, if the policy is deterministic.
    pub fn actions(&self) -> Option<Vec<usize>> {
        self.probs
            .axis_iter(Axis(0))
            .map(|row| row.iter().position(|&p| p == 1.0))
            .collect()
    }
}

/// State values, in units of discounted return.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction(pub Array1<f64>);

/// State-action values, in units of discounted return.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction(pub Array2<f64>);

impl ValueFunction {
    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }
}

impl QFunction {
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// `V[s] = sum_a pi(a|s) Q[s][a]`.
    pub fn state_values(&self, policy: &Policy) -> ValueFunction {
        ValueFunction((&self.0 * &policy.probs).sum_axis(Axis(1)))
    }
}

/// Marginal state-to-state matrix under `policy`.
pub fn policy_transition_matrix(mdp: &TabularMdp, policy: &Policy) -> Result<Array2<f64>> {
    mdp.check_policy(policy)?;
    Ok(linalg::marginalize(mdp.transition(), policy.probs()))
}

/// Exact state values of `policy` by a direct linear solve.
pub fn solve_values(mdp: &TabularMdp, policy: &Policy) -> Result<ValueFunction> {
    solve_q_values(mdp, policy).map(|(v, _)| v)
}

/// Exact state and action values of `policy`.
pub fn solve_q_values(mdp: &TabularMdp, policy: &Policy) -> Result<(ValueFunction, QFunction)> {
    mdp.check_policy(policy)?;
    let (v, q) = linalg::evaluate_q(
        mdp.transition(),
        mdp.reward(),
        policy.probs(),
        mdp.discount(),
        mdp.terminal(),
    )?;
    Ok((ValueFunction(v), QFunction(q)))
}

/// Greedy improvement step with uniform random tie-breaking.
///
/// For each state the set of actions within [`TIE_TOL`] of the best value is formed. If
/// `current` is deterministic and its action is in that set it is kept, which makes
/// convergence detectable; otherwise an action is drawn uniformly from the set.
pub fn greedy_improvement<R: Rng + ?Sized>(
    q: ArrayView2<'_, f64>,
    current: Option<&Policy>,
    rng: &mut R,
) -> Policy {
    let (s_n, a_n) = q.dim();
    let current_actions = current.and_then(Policy::actions);
    let mut actions = Vec::with_capacity(s_n);
    let mut ties = Vec::with_capacity(a_n);
    for s in 0..s_n {
        let row = q.row(s);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ties.clear();
        ties.extend((0..a_n).filter(|&a| row[a] >= best - TIE_TOL));
        let keep = current_actions
            .as_ref()
            .map(|acts| acts[s])
            .filter(|a| ties.contains(a));
        let chosen = match keep {
            Some(a) => a,
            None if ties.len() == 1 => ties[0],
            None => ties[rng.gen_range(0..ties.len())],
        };
        actions.push(chosen);
    }
    Policy::deterministic(&actions, a_n).expect("greedy actions are in range")
}

/// Outcome of [`policy_iteration`].
#[derive(Debug, Clone)]
pub struct PolicyIterationResult {
    pub policy: Policy,
    pub values: ValueFunction,
    pub iterations: usize,
    pub converged: bool,
}

/// Howard policy iteration from the uniform policy, capped at `max_iters` evaluations.
pub fn policy_iteration<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    max_iters: usize,
    rng: &mut R,
) -> Result<PolicyIterationResult> {
    if max_iters == 0 {
        return Err(Error::Config("policy iteration needs max_iters >= 1".into()));
    }
    let uniform = Policy::uniform(mdp.num_states(), mdp.num_actions());
    let (_, q) = solve_q_values(mdp, &uniform)?;
    let mut policy = greedy_improvement(q.values(), None, rng);
    let mut iterations = 0;
    loop {
        let (v, q) = solve_q_values(mdp, &policy)?;
        iterations += 1;
        let next = greedy_improvement(q.values(), Some(&policy), rng);
        if next == policy {
            return Ok(PolicyIterationResult {
                policy,
                values: v,
                iterations,
                converged: true,
            });
        }
        if iterations >= max_iters {
            let values = solve_values(mdp, &next)?;
            return Ok(PolicyIterationResult {
                policy: next,
                values,
                iterations,
                converged: false,
            });
        }
        policy = next;
    }
}

/// Expected undiscounted return of `policy` over `horizon` steps from the initial
/// distribution, computed exactly by backward recursion.
pub fn finite_horizon_return(mdp: &TabularMdp, policy: &Policy, horizon: usize) -> Result<f64> {
    mdp.check_policy(policy)?;
    let m = linalg::marginalize(mdp.transition(), policy.probs());
    let r_pi = (&mdp.reward * &policy.probs).sum_axis(Axis(1));
    let mut v = Array1::<f64>::zeros(mdp.num_states());
    for _ in 0..horizon {
        v = &r_pi + &m.dot(&v);
    }
    Ok(mdp.initial_dist.dot(&v))
}

/// Best achievable expected undiscounted `horizon`-step return, by backward induction over
/// non-stationary policies.
pub fn optimal_finite_horizon_return(mdp: &TabularMdp, horizon: usize) -> f64 {
    let (s_n, a_n, _) = mdp.transition.dim();
    let mut v = Array1::<f64>::zeros(s_n);
    for _ in 0..horizon {
        let next = Array1::from_shape_fn(s_n, |s| {
            (0..a_n)
                .map(|a| {
                    mdp.reward[[s, a]] + mdp.transition.slice(ndarray::s![s, a, ..]).dot(&v)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        });
        v = next;
    }
    mdp.initial_dist.dot(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_state(reward: f64, discount: f64, terminal: bool) -> TabularMdp {
        TabularMdp::new(
            Array3::from_elem((1, 1, 1), 1.0),
            array![[reward]],
            discount,
            array![1.0],
            vec![terminal],
        )
        .unwrap()
    }

    #[test]
    fn self_loop_geometric_series() {
        let mdp = single_state(1.0, 0.99, false);
        let v = solve_values(&mdp, &Policy::uniform(1, 1)).unwrap();
        assert!((v.0[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn terminal_state_has_zero_value() {
        let mdp = single_state(3.0, 0.9, true);
        assert_eq!(mdp.reward()[[0, 0]], 0.0);
        let (v, q) = solve_q_values(&mdp, &Policy::uniform(1, 1)).unwrap();
        assert_eq!(v.0[0], 0.0);
        assert_eq!(q.0[[0, 0]], 0.0);
    }

    #[test]
    fn rejects_bad_rows() {
        let mut p = Array3::from_elem((2, 1, 2), 0.5);
        p[[0, 0, 0]] = 0.6;
        let err = TabularMdp::new(p, array![[0.0], [0.0]], 0.9, array![1.0, 0.0], vec![false; 2]);
        assert!(matches!(err, Err(Error::InvalidDistribution(_))));
        let err = TabularMdp::new(
            Array3::from_elem((2, 1, 2), 0.5),
            array![[0.0], [0.0]],
            0.9,
            array![0.7, 0.7],
            vec![false; 2],
        );
        assert!(matches!(err, Err(Error::InvalidDistribution(_))));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let err = TabularMdp::new(
            Array3::from_elem((2, 1, 2), 0.5),
            array![[0.0, 1.0], [0.0, 1.0]],
            0.9,
            array![1.0, 0.0],
            vec![false; 2],
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
        let mdp = single_state(0.0, 0.5, false);
        let bad = Policy::uniform(2, 1);
        assert!(matches!(solve_values(&mdp, &bad), Err(Error::Dimension(_))));
        assert!(matches!(
            policy_transition_matrix(&mdp, &bad),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_discount_gives_immediate_reward() {
        let mut p = Array3::zeros((2, 2, 2));
        p[[0, 0, 1]] = 1.0;
        p[[0, 1, 0]] = 1.0;
        p[[1, 0, 0]] = 1.0;
        p[[1, 1, 1]] = 1.0;
        let r = array![[1.0, -2.0], [0.5, 3.0]];
        let mdp = TabularMdp::new(p, r.clone(), 0.0, array![0.5, 0.5], vec![false; 2]).unwrap();
        let pi = Policy::new(array![[0.25, 0.75], [1.0, 0.0]]).unwrap();
        let (v, q) = solve_q_values(&mdp, &pi).unwrap();
        assert_eq!(q.0, r);
        assert!((v.0[0] - (0.25 - 1.5)).abs() < 1e-12);
        assert!((v.0[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_composition_is_zero_one() {
        let mut p = Array3::zeros((3, 2, 3));
        for s in 0..3 {
            p[[s, 0, (s + 1) % 3]] = 1.0;
            p[[s, 1, (s + 2) % 3]] = 1.0;
        }
        let mdp =
            TabularMdp::new(p, Array2::zeros((3, 2)), 0.9, array![1.0, 0.0, 0.0], vec![false; 3])
                .unwrap();
        let pi = Policy::deterministic(&[0, 1, 0], 2).unwrap();
        let m = policy_transition_matrix(&mdp, &pi).unwrap();
        assert_eq!(m, array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn identical_actions_match_single_slice() {
        let mut p = Array3::zeros((2, 2, 2));
        for a in 0..2 {
            p[[0, a, 0]] = 0.3;
            p[[0, a, 1]] = 0.7;
            p[[1, a, 1]] = 1.0;
        }
        let mdp =
            TabularMdp::new(p.clone(), Array2::zeros((2, 2)), 0.9, array![1.0, 0.0], vec![false; 2])
                .unwrap();
        let m = policy_transition_matrix(&mdp, &Policy::uniform(2, 2)).unwrap();
        assert_eq!(m, p.index_axis(Axis(1), 0));
    }

    #[test]
    fn strictly_dominant_action_is_chosen() {
        let mut p = Array3::zeros((3, 2, 3));
        for s in 0..3 {
            for a in 0..2 {
                p[[s, a, (s + a + 1) % 3]] = 1.0;
            }
        }
        let r = array![[0.0, 1.0], [-1.0, 0.5], [0.2, 0.3]];
        let mdp = TabularMdp::new(p, r, 0.0, array![1.0, 0.0, 0.0], vec![false; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = policy_iteration(&mdp, 40, &mut rng).unwrap();
        assert!(out.converged);
        assert_eq!(out.policy.actions().unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn tie_break_is_uniform() {
        let mdp = TabularMdp::new(
            Array3::from_elem((1, 2, 1), 1.0),
            array![[1.0, 1.0]],
            0.5,
            array![1.0],
            vec![false],
        )
        .unwrap();
        let mut first = 0;
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = policy_iteration(&mdp, 40, &mut rng).unwrap();
            if out.policy.actions().unwrap()[0] == 0 {
                first += 1;
            }
        }
        // Binomial(1000, 0.5): 4 sigma is about 63.
        assert!((437..=563).contains(&first), "action 0 chosen {first} times");
    }

    #[test]
    fn zero_iteration_cap_is_rejected() {
        let mdp = single_state(1.0, 0.5, false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(policy_iteration(&mdp, 0, &mut rng).is_err());
    }

    #[test]
    fn finite_horizon_matches_hand_sum() {
        let mdp = single_state(1.0, 0.5, false);
        let pi = Policy::uniform(1, 1);
        assert!((finite_horizon_return(&mdp, &pi, 7).unwrap() - 7.0).abs() < 1e-12);
        assert!((optimal_finite_horizon_return(&mdp, 7) - 7.0).abs() < 1e-12);
    }
}
