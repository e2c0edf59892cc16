//! Posterior variance of Q-values.
//!
//! Three estimators are provided:
//!
//! * `exact-ube`: solves an uncertainty Bellman equation whose local reward subtracts the
//!   average aleatoric spread of next-state values from their total spread under the mean
//!   model. Under independent transitions and an acyclic MDP its solution is exactly the
//!   posterior variance of Q.
//! * `pombu`: the same recursion driven by the epistemic spread `w` alone, an upper bound.
//! * `ensemble-var`: the sample variance of the ensemble's Q-functions.
//!
//! Expectations over the posterior are ensemble averages. Variances over the next state and
//! action for a fixed model are computed exactly by summation over `(s', a')`.
//!
//! An ensemble is either *sampled* (uniform weights, Bessel-corrected spreads) or an
//! *exact* enumeration of a finite posterior support (given weights, population moments).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{Policy, QFunction, TabularMdp};
use crate::posterior::MdpPosterior;

/// Definition of the exact local uncertainty reward. All three coincide when the
/// independence and acyclicity assumptions hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum ExactUbeVariant {
    /// Total next-value variance under the mean model minus the mean aleatoric variance.
    One,
    /// `w` minus the difference of aleatoric variances of `Q_i` and the mean `Q`.
    Two,
    /// `w` minus the mean aleatoric variance of `Q_i - Q_mean`.
    #[default]
    Three,
}

impl ExactUbeVariant {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            other => Err(Error::Config(format!("exact-ube variant {other} not in 1..=3"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
        }
    }
}

/// Which local uncertainty signal a reward table holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyKind {
    ExactUbe(ExactUbeVariant),
    Pombu,
}

/// Q-variance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    ExactUbe(ExactUbeVariant),
    Pombu,
    EnsembleVar,
}

impl Estimator {
    /// Short identifier used in logs and CSV files.
    pub fn id(&self) -> String {
        match self {
            Estimator::ExactUbe(ExactUbeVariant::Three) => "exact-ube".into(),
            Estimator::ExactUbe(v) => format!("exact-ube-{}", v.index()),
            Estimator::Pombu => "pombu".into(),
            Estimator::EnsembleVar => "ensemble-var".into(),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl serde::Serialize for Estimator {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Estimator {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-ube" | "exact-ube-3" => Ok(Estimator::ExactUbe(ExactUbeVariant::Three)),
            "exact-ube-1" => Ok(Estimator::ExactUbe(ExactUbeVariant::One)),
            "exact-ube-2" => Ok(Estimator::ExactUbe(ExactUbeVariant::Two)),
            "pombu" => Ok(Estimator::Pombu),
            "ensemble-var" => Ok(Estimator::EnsembleVar),
            other => Err(Error::Config(format!("unknown variance estimator '{other}'"))),
        }
    }
}

/// Per state-action local uncertainty, in squared-return units.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRewards {
    pub values: Array2<f64>,
    pub kind: UncertaintyKind,
    /// Clip floor applied so far; `-inf` when unclipped.
    pub u_min: f64,
}

/// Solution of an uncertainty Bellman equation (or a direct variance estimate).
#[derive(Debug, Clone, PartialEq)]
pub struct UValues(pub Array2<f64>);

/// The nonnegative gap between the upper-bound and exact local uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct GapValues(pub Array2<f64>);

impl UValues {
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_table_csv(self.0.view(), out)
    }
}

impl UncertaintyRewards {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_table_csv(self.values.view(), out)
    }
}

/// Writes a state-action table as `s,a,value` rows.
pub fn write_table_csv<W: Write>(table: ArrayView2<'_, f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "a", "value"])?;
    for ((s, a), v) in table.indexed_iter() {
        w.write_record([s.to_string(), a.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// MDP samples, their Q-functions under one policy, and the ensemble-mean Q.
#[derive(Debug, Clone)]
pub struct MdpEnsemble {
    members: Vec<TabularMdp>,
    q_functions: Vec<QFunction>,
    q_mean: QFunction,
    weights: Vec<f64>,
    exact: bool,
    systems: Vec<Option<linalg::CachedSystem>>,
}

impl MdpEnsemble {
    /// Ensemble of independent posterior samples; spreads use Bessel's correction.
    pub fn from_samples(members: Vec<TabularMdp>, policy: &Policy) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InsufficientSamples {
                required: 2,
                got: members.len(),
            });
        }
        let n = members.len();
        Self::evaluate(members, vec![1.0 / n as f64; n], false, Vec::new(), policy)
    }

    /// Exact enumeration of a finite posterior support with probabilities `weights`.
    pub fn from_support(members: Vec<TabularMdp>, weights: Vec<f64>, policy: &Policy) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InsufficientSamples { required: 1, got: 0 });
        }
        check_weights(&weights, members.len())?;
        Self::evaluate(members, weights, true, Vec::new(), policy)
    }

    fn evaluate(
        members: Vec<TabularMdp>,
        weights: Vec<f64>,
        exact: bool,
        mut systems: Vec<Option<linalg::CachedSystem>>,
        policy: &Policy,
    ) -> Result<Self> {
        let first = &members[0];
        for m in &members[1..] {
            if m.num_states() != first.num_states()
                || m.num_actions() != first.num_actions()
                || m.discount() != first.discount()
                || m.terminal() != first.terminal()
            {
                return Err(Error::Dimension("ensemble members disagree in shape".into()));
            }
        }
        first.check_policy(policy)?;
        systems.resize(members.len(), None);
        let q_functions = members
            .iter()
            .zip(systems.iter_mut())
            .map(|(m, sys)| {
                linalg::evaluate_q_cached(
                    sys,
                    m.transition(),
                    m.reward(),
                    policy.probs(),
                    m.discount(),
                    m.terminal(),
                )
                .map(|(_, q)| QFunction(q))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut q_mean = Array2::<f64>::zeros(q_functions[0].0.dim());
        for (q, &w) in q_functions.iter().zip(&weights) {
            q_mean.scaled_add(w, &q.0);
        }
        Ok(Self {
            members,
            q_functions,
            q_mean: QFunction(q_mean),
            weights,
            exact,
            systems,
        })
    }

    /// Re-solves every member's Q-function for a new policy, reusing factorizations from
    /// earlier evaluations where the policies are close.
    pub fn reevaluate(self, policy: &Policy) -> Result<Self> {
        Self::evaluate(self.members, self.weights, self.exact, self.systems, policy)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[TabularMdp] {
        &self.members
    }

    pub fn q_functions(&self) -> &[QFunction] {
        &self.q_functions
    }

    pub fn q_mean(&self) -> &QFunction {
        &self.q_mean
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// Weighted mean of per-member tables.
    fn mean_of(&self, tables: &[Array2<f64>]) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(tables[0].dim());
        for (t, &w) in tables.iter().zip(&self.weights) {
            out.scaled_add(w, t);
        }
        out
    }

    /// Elementwise spread of per-member tables: Bessel-corrected for samples, the
    /// population variance for an enumerated support.
    fn spread_of(&self, tables: &[Array2<f64>]) -> Array2<f64> {
        let mean = self.mean_of(tables);
        let mut out = Array2::<f64>::zeros(mean.dim());
        for (t, &w) in tables.iter().zip(&self.weights) {
            Zip::from(&mut out).and(t).and(&mean).for_each(|o, &x, &m| {
                *o += w * (x - m) * (x - m);
            });
        }
        if !self.exact {
            let n = tables.len() as f64;
            out.mapv_inplace(|v| v * n / (n - 1.0));
        }
        out
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        self.members[0].check_policy(policy)
    }
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Dimension(format!("{} weights for {} members", weights.len(), n)));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidDistribution("support weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > crate::mdp::PROB_TOL {
        return Err(Error::InvalidDistribution(format!("support weights sum to {total}")));
    }
    Ok(())
}

/// Draws `n` MDPs from the posterior, each from its own random stream.
pub fn sample_members<R: Rng + ?Sized>(
    posterior: &MdpPosterior,
    n: usize,
    rng: &mut R,
) -> Result<Vec<TabularMdp>> {
    let base: u64 = rng.gen();
    (0..n)
        .map(|i| {
            let mut member_rng = ChaCha8Rng::seed_from_u64(base);
            member_rng.set_stream(i as u64);
            posterior.sample_mdp(&mut member_rng)
        })
        .collect()
}

/// Samples `n` MDPs and solves their Q-functions under `policy`.
pub fn build_ensemble<R: Rng + ?Sized>(
    posterior: &MdpPosterior,
    policy: &Policy,
    n: usize,
    rng: &mut R,
) -> Result<MdpEnsemble> {
    if n < 2 {
        return Err(Error::InsufficientSamples { required: 2, got: n });
    }
    MdpEnsemble::from_samples(sample_members(posterior, n, rng)?, policy)
}

/// `E_{s'~p(.|s,a), a'~pi(.|s')}[X(s',a')]` for every `(s,a)`.
fn next_mean(p: ArrayView3<'_, f64>, policy: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (s_n, a_n, _) = p.dim();
    let x_pi = (&x * &policy).sum_axis(Axis(1));
    let flat = p
        .to_shape((s_n * a_n, s_n))
        .expect("contiguous transition tensor");
    flat.dot(&x_pi)
        .into_shape_with_order((s_n, a_n))
        .expect("reshape next-state means")
}

/// `V_{s'~p(.|s,a), a'~pi(.|s')}[X(s',a')]` for every `(s,a)`.
///
/// Split as the mean within-state spread plus the spread of per-state means, so both
/// parts are sums of squares and the result is nonnegative.
fn next_variance(
    p: ArrayView3<'_, f64>,
    policy: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let (s_n, a_n, _) = p.dim();
    let x_pi = (&x * &policy).sum_axis(Axis(1));
    let mut within = Array1::<f64>::zeros(s_n);
    Zip::from(&mut within)
        .and(x.rows())
        .and(policy.rows())
        .and(&x_pi)
        .for_each(|w, xs, pis, &m| {
            *w = xs.iter().zip(pis).map(|(&v, &pi)| pi * (v - m) * (v - m)).sum();
        });
    let flat = p
        .to_shape((s_n * a_n, s_n))
        .expect("contiguous transition tensor");
    let out: Array1<f64> = flat
        .rows()
        .into_iter()
        .map(|row| {
            let c = row.dot(&x_pi);
            Zip::from(&row)
                .and(&within)
                .and(&x_pi)
                .fold(0.0, |acc, &ps, &w, &m| acc + ps * (w + (m - c) * (m - c)))
        })
        .collect();
    out.into_shape_with_order((s_n, a_n))
        .expect("reshape next-state variances")
}

/// Upper-bound local uncertainty `w(s,a) = V_p[ sum p(s'|s,a) pi(a'|s') Qmean(s',a') ]`.
pub fn pombu_rewards(ensemble: &MdpEnsemble, policy: &Policy) -> Result<UncertaintyRewards> {
    ensemble.check_policy(policy)?;
    let w = epistemic_spread(ensemble, policy);
    Ok(UncertaintyRewards {
        values: w,
        kind: UncertaintyKind::Pombu,
        u_min: f64::NEG_INFINITY,
    })
}

fn epistemic_spread(ensemble: &MdpEnsemble, policy: &Policy) -> Array2<f64> {
    let q_mean = ensemble.q_mean.values();
    let m: Vec<Array2<f64>> = ensemble
        .members
        .iter()
        .map(|mdp| next_mean(mdp.transition(), policy.probs(), q_mean))
        .collect();
    ensemble.spread_of(&m)
}

/// Mean over members of the aleatoric next-state variance of `f(i)`.
fn mean_aleatoric<F>(ensemble: &MdpEnsemble, policy: &Policy, f: F) -> Array2<f64>
where
    F: Fn(usize) -> Array2<f64>,
{
    let per_member: Vec<Array2<f64>> = ensemble
        .members
        .iter()
        .enumerate()
        .map(|(i, mdp)| next_variance(mdp.transition(), policy.probs(), f(i).view()))
        .collect();
    ensemble.mean_of(&per_member)
}

/// Exact local uncertainty rewards. May be negative.
///
/// `mean` is the posterior-mean MDP, used by variant 1.
pub fn exact_ube_rewards(
    ensemble: &MdpEnsemble,
    mean: &TabularMdp,
    policy: &Policy,
    variant: ExactUbeVariant,
) -> Result<UncertaintyRewards> {
    ensemble.check_policy(policy)?;
    mean.check_policy(policy)?;
    let q_mean = ensemble.q_mean.values();
    let q = |i: usize| ensemble.q_functions[i].0.clone();
    let values = match variant {
        ExactUbeVariant::One => {
            let total = next_variance(mean.transition(), policy.probs(), q_mean);
            total - mean_aleatoric(ensemble, policy, q)
        }
        ExactUbeVariant::Two => {
            let w = epistemic_spread(ensemble, policy);
            let own = mean_aleatoric(ensemble, policy, q);
            let shared = mean_aleatoric(ensemble, policy, |_| q_mean.to_owned());
            w - (own - shared)
        }
        ExactUbeVariant::Three => {
            let w = epistemic_spread(ensemble, policy);
            w - gap_values(ensemble, policy)?.0
        }
    };
    Ok(UncertaintyRewards {
        values,
        kind: UncertaintyKind::ExactUbe(variant),
        u_min: f64::NEG_INFINITY,
    })
}

/// Gap `g(s,a) = E_p[ V_{s',a'~p,pi}[Q_p(s',a') - Qmean(s',a')] ]`, nonnegative by construction.
pub fn gap_values(ensemble: &MdpEnsemble, policy: &Policy) -> Result<GapValues> {
    ensemble.check_policy(policy)?;
    let q_mean = &ensemble.q_mean.0;
    Ok(GapValues(mean_aleatoric(ensemble, policy, |i| {
        &ensemble.q_functions[i].0 - q_mean
    })))
}

/// Components of the one-step spread of mean next values.
#[derive(Debug, Clone)]
pub struct LocalDecomposition {
    /// Next-value variance under the mean model.
    pub total: Array2<f64>,
    /// Posterior variance of the expected next value (`w`).
    pub epistemic: Array2<f64>,
    /// Posterior mean of the next-value variance under each model.
    pub aleatoric: Array2<f64>,
}

/// Splits the total next-state spread of the mean Q into epistemic and aleatoric parts.
pub fn local_decomposition(
    ensemble: &MdpEnsemble,
    mean: &TabularMdp,
    policy: &Policy,
) -> Result<LocalDecomposition> {
    ensemble.check_policy(policy)?;
    mean.check_policy(policy)?;
    let q_mean = ensemble.q_mean.values();
    Ok(LocalDecomposition {
        total: next_variance(mean.transition(), policy.probs(), q_mean),
        epistemic: epistemic_spread(ensemble, policy),
        aleatoric: mean_aleatoric(ensemble, policy, |_| q_mean.to_owned()),
    })
}

/// Elementwise `max(u_min, u)`.
pub fn clip_rewards(u: &UncertaintyRewards, u_min: f64) -> UncertaintyRewards {
    UncertaintyRewards {
        values: u.values.mapv(|x| x.max(u_min)),
        kind: u.kind,
        u_min: u.u_min.max(u_min),
    }
}

/// Solves `U(s,a) = rv(s,a) + g^2 u(s,a) + g^2 sum p_mean(s'|s,a) pi(a'|s') U(s',a')`.
///
/// Terminal states carry no uncertainty.
pub fn solve_ube(
    mean: &TabularMdp,
    policy: &Policy,
    u: &UncertaintyRewards,
    reward_var: ArrayView2<'_, f64>,
) -> Result<UValues> {
    solve_ube_cached(mean, policy, u, reward_var, &mut None)
}

/// [`solve_ube`] reusing a factorization of the mean MDP's system from earlier calls with
/// the same `mean`.
pub(crate) fn solve_ube_cached(
    mean: &TabularMdp,
    policy: &Policy,
    u: &UncertaintyRewards,
    reward_var: ArrayView2<'_, f64>,
    system: &mut Option<linalg::CachedSystem>,
) -> Result<UValues> {
    mean.check_policy(policy)?;
    let dim = (mean.num_states(), mean.num_actions());
    if u.values.dim() != dim || reward_var.dim() != dim {
        return Err(Error::Dimension(format!(
            "uncertainty rewards {:?}, reward variance {:?}, MDP {:?}",
            u.values.dim(),
            reward_var.dim(),
            dim
        )));
    }
    let g2 = mean.discount() * mean.discount();
    let mut forcing = &reward_var + &(g2 * &u.values);
    for (s, &t) in mean.terminal().iter().enumerate() {
        if t {
            forcing.row_mut(s).fill(0.0);
        }
    }
    let (_, values) = linalg::evaluate_q_cached(
        system,
        mean.transition(),
        forcing.view(),
        policy.probs(),
        g2,
        mean.terminal(),
    )?;
    Ok(UValues(values))
}

/// Spread of the members' Q-functions.
pub fn ensemble_variance(ensemble: &MdpEnsemble) -> UValues {
    let qs: Vec<Array2<f64>> = ensemble.q_functions.iter().map(|q| q.0.clone()).collect();
    UValues(ensemble.spread_of(&qs))
}

/// Estimates the posterior variance of Q under `policy` with the chosen method.
///
/// UBE-based estimators clip their local rewards at `u_min`, add `reward_var` and solve on
/// the mean MDP; `ensemble-var` reads the spread of the ensemble directly.
pub fn qvariance(
    ensemble: &MdpEnsemble,
    mean: &TabularMdp,
    reward_var: ArrayView2<'_, f64>,
    policy: &Policy,
    estimator: Estimator,
    u_min: f64,
) -> Result<UValues> {
    qvariance_cached(ensemble, mean, reward_var, policy, estimator, u_min, &mut None)
}

/// [`qvariance`] with the UBE system of `mean` cached across calls.
pub(crate) fn qvariance_cached(
    ensemble: &MdpEnsemble,
    mean: &TabularMdp,
    reward_var: ArrayView2<'_, f64>,
    policy: &Policy,
    estimator: Estimator,
    u_min: f64,
    system: &mut Option<linalg::CachedSystem>,
) -> Result<UValues> {
    let u = match estimator {
        Estimator::EnsembleVar => {
            ensemble.check_policy(policy)?;
            return Ok(ensemble_variance(ensemble));
        }
        Estimator::Pombu => pombu_rewards(ensemble, policy)?,
        Estimator::ExactUbe(variant) => exact_ube_rewards(ensemble, mean, policy, variant)?,
    };
    solve_ube_cached(mean, policy, &clip_rewards(&u, u_min), reward_var, system)
}

/// A finite posterior over MDPs given by explicit support points and probabilities.
#[derive(Debug, Clone)]
pub struct EnumeratedPosterior {
    members: Vec<TabularMdp>,
    weights: Vec<f64>,
}

impl EnumeratedPosterior {
    pub fn new(members: Vec<TabularMdp>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InsufficientSamples { required: 1, got: 0 });
        }
        check_weights(&weights, members.len())?;
        let first = &members[0];
        for m in &members[1..] {
            if m.num_states() != first.num_states()
                || m.num_actions() != first.num_actions()
                || m.discount() != first.discount()
                || m.terminal() != first.terminal()
                || m.initial_dist() != first.initial_dist()
            {
                return Err(Error::Dimension("support MDPs disagree in shape".into()));
            }
        }
        Ok(Self { members, weights })
    }

    pub fn uniform(members: Vec<TabularMdp>) -> Result<Self> {
        let n = members.len();
        Self::new(members, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn members(&self) -> &[TabularMdp] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Probability-weighted average of transitions and rewards.
    pub fn mean_mdp(&self) -> Result<TabularMdp> {
        let first = &self.members[0];
        let mut transition = Array3::<f64>::zeros(first.transition().dim());
        let mut reward = Array2::<f64>::zeros(first.reward().dim());
        for (m, &w) in self.members.iter().zip(&self.weights) {
            transition.scaled_add(w, &m.transition());
            reward.scaled_add(w, &m.reward());
        }
        // Renormalize away accumulated rounding.
        for mut row in transition.lanes_mut(Axis(2)) {
            let total = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        TabularMdp::new(
            transition,
            reward,
            first.discount(),
            first.initial_dist().to_owned(),
            first.terminal().to_vec(),
        )
    }

    /// Variance of each reward across the support.
    pub fn reward_variance(&self) -> Array2<f64> {
        let dim = self.members[0].reward().dim();
        let mut mean = Array2::<f64>::zeros(dim);
        for (m, &w) in self.members.iter().zip(&self.weights) {
            mean.scaled_add(w, &m.reward());
        }
        let mut var = Array2::<f64>::zeros(dim);
        for (m, &w) in self.members.iter().zip(&self.weights) {
            let d = &m.reward() - &mean;
            var.scaled_add(w, &(&d * &d));
        }
        var
    }

    /// The whole support as an exact ensemble under `policy`.
    pub fn ensemble(&self, policy: &Policy) -> Result<MdpEnsemble> {
        MdpEnsemble::from_support(self.members.clone(), self.weights.clone(), policy)
    }
}
