//! Dense linear solves for policy evaluation.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use ndarray::{Array1, Array2, ArrayView2, ArrayView3};

use crate::error::{Error, Result};

/// Solves `x = rhs + discount * m x` with the rows flagged in `pinned` forced to zero.
///
/// Pinned rows model absorbing zero-reward states, whose value is exactly zero for any
/// discount; pinning them keeps the system nonsingular at `discount = 1` as long as every
/// other state eventually reaches a pinned one.
pub(crate) fn solve_discounted(
    m: ArrayView2<'_, f64>,
    rhs: &Array1<f64>,
    discount: f64,
    pinned: &[bool],
) -> Result<Array1<f64>> {
    let n = rhs.len();
    if m.dim() != (n, n) || pinned.len() != n {
        return Err(Error::Dimension(format!(
            "system matrix {:?}, rhs {}, pinned {}",
            m.dim(),
            n,
            pinned.len()
        )));
    }
    let b = DVector::from_fn(n, |i, _| if pinned[i] { 0.0 } else { rhs[i] });
    let x = system_matrix(m, discount, pinned)
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular(format!("(I - {discount} M) of size {n}")))?;
    finite(x, discount)
}

/// `M[s][s'] = sum_a pi(a|s) P[s][a][s']`.
pub(crate) fn marginalize(transition: ArrayView3<'_, f64>, policy: ArrayView2<'_, f64>) -> Array2<f64> {
    let (s_n, a_n, _) = transition.dim();
    let mut m = Array2::<f64>::zeros((s_n, s_n));
    for s in 0..s_n {
        let mut row = m.row_mut(s);
        for a in 0..a_n {
            let w = policy[[s, a]];
            if w != 0.0 {
                row.scaled_add(w, &transition.slice(ndarray::s![s, a, ..]));
            }
        }
    }
    m
}

/// Evaluates the action-value fixed point `Q = c + discount * P (pi . Q)`.
///
/// Returns `(V, Q)` with `V[s] = sum_a pi(a|s) Q[s][a]`. The solve is carried out on the
/// state system and lifted back to state-action pairs.
pub(crate) fn evaluate_q(
    transition: ArrayView3<'_, f64>,
    reward: ArrayView2<'_, f64>,
    policy: ArrayView2<'_, f64>,
    discount: f64,
    pinned: &[bool],
) -> Result<(Array1<f64>, Array2<f64>)> {
    check_shapes(transition, reward, policy)?;
    let m = marginalize(transition, policy);
    let v = solve_discounted(m.view(), &policy_reward(reward, policy), discount, pinned)?;
    let q = lift(transition, reward, &v, discount);
    Ok((v, q))
}

fn system_matrix(m: ArrayView2<'_, f64>, discount: f64, pinned: &[bool]) -> DMatrix<f64> {
    let n = pinned.len();
    DMatrix::from_fn(n, n, |i, j| {
        let eye = if i == j { 1.0 } else { 0.0 };
        if pinned[i] {
            eye
        } else {
            eye - discount * m[[i, j]]
        }
    })
}

fn finite(x: DVector<f64>, discount: f64) -> Result<Array1<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!(
            "non-finite solution for (I - {discount} M) of size {}",
            x.len()
        )));
    }
    Ok(Array1::from_iter(x.iter().copied()))
}

/// Factorization of `I - discount * M` for one MDP under a reference policy.
///
/// Systems for policies that differ from the reference in a few states are solved with a
/// low-rank (Woodbury) correction instead of a fresh factorization.
#[derive(Debug, Clone)]
pub(crate) struct CachedSystem {
    policy: Array2<f64>,
    m: Array2<f64>,
    discount: f64,
    lu: LU<f64, Dyn, Dyn>,
}

impl CachedSystem {
    fn factor(transition: ArrayView3<'_, f64>, policy: ArrayView2<'_, f64>, discount: f64, pinned: &[bool]) -> Self {
        let m = marginalize(transition, policy);
        let lu = system_matrix(m.view(), discount, pinned).lu();
        Self {
            policy: policy.to_owned(),
            m,
            discount,
            lu,
        }
    }

    /// States, outside `pinned`, whose policy row differs from the reference.
    fn changed(&self, policy: ArrayView2<'_, f64>, pinned: &[bool]) -> Vec<usize> {
        (0..pinned.len())
            .filter(|&s| !pinned[s] && self.policy.row(s) != policy.row(s))
            .collect()
    }

    fn solve(
        &self,
        transition: ArrayView3<'_, f64>,
        policy: ArrayView2<'_, f64>,
        changed: &[usize],
        rhs: &Array1<f64>,
        pinned: &[bool],
    ) -> Result<Array1<f64>> {
        let n = rhs.len();
        let singular = || Error::Singular(format!("(I - {} M) of size {n}", self.discount));
        let b = DVector::from_fn(n, |i, _| if pinned[i] { 0.0 } else { rhs[i] });
        let y = self.lu.solve(&b).ok_or_else(singular)?;
        let k = changed.len();
        if k == 0 {
            return finite(y, self.discount);
        }
        // A_new = A_ref + E V with E selecting the changed rows and V their row differences.
        let mut e = DMatrix::<f64>::zeros(n, k);
        let mut v = DMatrix::<f64>::zeros(k, n);
        let a_n = policy.ncols();
        for (j, &s) in changed.iter().enumerate() {
            e[(s, j)] = 1.0;
            for a in 0..a_n {
                let w = policy[[s, a]];
                if w != 0.0 {
                    for (t, &p) in transition.slice(ndarray::s![s, a, ..]).iter().enumerate() {
                        v[(j, t)] -= self.discount * w * p;
                    }
                }
            }
            for t in 0..n {
                v[(j, t)] += self.discount * self.m[[s, t]];
            }
        }
        let z = self.lu.solve(&e).ok_or_else(singular)?;
        let mut capacitance = &v * &z;
        for j in 0..k {
            capacitance[(j, j)] += 1.0;
        }
        let t = capacitance.lu().solve(&(&v * &y)).ok_or_else(singular)?;
        finite(y - z * t, self.discount)
    }
}

/// Like [`solve_discounted`] for the policy-marginal system, reusing and refreshing `cache`.
///
/// The cache is rebuilt when more than an eighth of the states changed policy.
pub(crate) fn solve_policy_cached(
    cache: &mut Option<CachedSystem>,
    transition: ArrayView3<'_, f64>,
    policy: ArrayView2<'_, f64>,
    rhs: &Array1<f64>,
    discount: f64,
    pinned: &[bool],
) -> Result<Array1<f64>> {
    let n = rhs.len();
    let limit = (n / 8).max(1);
    if let Some(c) = cache.as_ref().filter(|c| c.discount == discount) {
        let changed = c.changed(policy, pinned);
        if changed.len() <= limit {
            return c.solve(transition, policy, &changed, rhs, pinned);
        }
    }
    let fresh = CachedSystem::factor(transition, policy, discount, pinned);
    let x = fresh.solve(transition, policy, &[], rhs, pinned);
    *cache = Some(fresh);
    x
}

/// [`evaluate_q`] through a [`CachedSystem`].
pub(crate) fn evaluate_q_cached(
    cache: &mut Option<CachedSystem>,
    transition: ArrayView3<'_, f64>,
    reward: ArrayView2<'_, f64>,
    policy: ArrayView2<'_, f64>,
    discount: f64,
    pinned: &[bool],
) -> Result<(Array1<f64>, Array2<f64>)> {
    check_shapes(transition, reward, policy)?;
    let r_pi = policy_reward(reward, policy);
    let v = solve_policy_cached(cache, transition, policy, &r_pi, discount, pinned)?;
    Ok((v.clone(), lift(transition, reward, &v, discount)))
}

fn check_shapes(
    transition: ArrayView3<'_, f64>,
    reward: ArrayView2<'_, f64>,
    policy: ArrayView2<'_, f64>,
) -> Result<()> {
    let (s_n, a_n, s_next) = transition.dim();
    if s_next != s_n || reward.dim() != (s_n, a_n) || policy.dim() != (s_n, a_n) {
        return Err(Error::Dimension(format!(
            "transition {:?}, reward {:?}, policy {:?}",
            transition.dim(),
            reward.dim(),
            policy.dim()
        )));
    }
    Ok(())
}

fn policy_reward(reward: ArrayView2<'_, f64>, policy: ArrayView2<'_, f64>) -> Array1<f64> {
    (&reward * &policy).sum_axis(ndarray::Axis(1))
}

/// `Q = c + discount * P V`.
fn lift(transition: ArrayView3<'_, f64>, reward: ArrayView2<'_, f64>, v: &Array1<f64>, discount: f64) -> Array2<f64> {
    let (s_n, a_n, _) = transition.dim();
    let flat = transition
        .to_shape((s_n * a_n, s_n))
        .expect("contiguous transition tensor");
    let next = flat
        .dot(v)
        .into_shape_with_order((s_n, a_n))
        .expect("reshape next values");
    &reward + &(discount * next)
}
