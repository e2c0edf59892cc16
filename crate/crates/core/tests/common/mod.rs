#![allow(dead_code)]

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ube_core::harness::{random_layered_instance, LayeredInstance, LayeredLimits};
use ube_core::mdp::{Policy, TabularMdp};
use ube_core::variance::EnumeratedPosterior;

pub fn instance(seed: u64) -> LayeredInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_layered_instance(&mut rng, LayeredLimits::default()).unwrap()
}

/// Q under `policy` by repeated Bellman backups. Layered MDPs are acyclic, so `S` sweeps
/// reach the fixed point exactly.
pub fn backup_q(mdp: &TabularMdp, policy: &Policy) -> Array2<f64> {
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let p = mdp.transition();
    let r = mdp.reward();
    let pi = policy.probs();
    let mut q = Array2::<f64>::zeros((s_n, a_n));
    for _ in 0..=s_n {
        let mut next = Array2::<f64>::zeros((s_n, a_n));
        for s in 0..s_n {
            if mdp.terminal()[s] {
                continue;
            }
            for a in 0..a_n {
                let mut v = 0.0;
                for s2 in 0..s_n {
                    for a2 in 0..a_n {
                        v += p[[s, a, s2]] * pi[[s2, a2]] * q[[s2, a2]];
                    }
                }
                next[[s, a]] = r[[s, a]] + mdp.discount() * v;
            }
        }
        q = next;
    }
    q
}

pub fn weighted_moments(tables: &[Array2<f64>], weights: &[f64]) -> (Array2<f64>, Array2<f64>) {
    let mut mean = Array2::<f64>::zeros(tables[0].dim());
    for (t, &w) in tables.iter().zip(weights) {
        mean.scaled_add(w, t);
    }
    let mut var = Array2::<f64>::zeros(mean.dim());
    for (t, &w) in tables.iter().zip(weights) {
        Zip::from(&mut var).and(t).and(&mean).for_each(|v, &x, &m| *v += w * (x - m) * (x - m));
    }
    (mean, var)
}

/// Posterior mean and variance of Q by enumerating every support point.
pub fn brute_force_q_moments(posterior: &EnumeratedPosterior, policy: &Policy) -> (Array2<f64>, Array2<f64>) {
    let qs: Vec<Array2<f64>> = posterior.members().iter().map(|m| backup_q(m, policy)).collect();
    weighted_moments(&qs, posterior.weights())
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0_f64, |acc, &x, &y| acc.max((x - y).abs()))
}

/// Sample mean and variance of `xs` with their standard errors.
pub fn sample_moments(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    (m, var, (var / n).sqrt(), ((m4 - m2 * m2) / n).sqrt())
}

/// z-scores of every sampled transition-probability and reward moment of `(s, a)` against
/// the Dirichlet and Normal formulas.
pub fn posterior_moment_zscores(
    posterior: &ube_core::posterior::MdpPosterior,
    s: usize,
    a: usize,
    samples: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s_n = posterior.num_states();
    let mut probs = vec![Vec::with_capacity(samples); s_n];
    let mut rewards = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mdp = posterior.sample_mdp(&mut rng).unwrap();
        for (k, col) in probs.iter_mut().enumerate() {
            col.push(mdp.transition()[[s, a, k]]);
        }
        rewards.push(mdp.reward()[[s, a]]);
    }
    let alpha = posterior.transitions().alpha();
    let total: f64 = (0..s_n).map(|k| alpha[[s, a, k]]).sum();
    let mut z = Vec::new();
    for (k, col) in probs.iter().enumerate() {
        let ak = alpha[[s, a, k]];
        let mean = ak / total;
        let var = ak * (total - ak) / (total * total * (total + 1.0));
        let (m, v, se_m, se_v) = sample_moments(col);
        z.push((m - mean).abs() / se_m);
        z.push((v - var).abs() / se_v);
    }
    let kappa = posterior.rewards().precision()[[s, a]];
    let mu = posterior.rewards().mean()[[s, a]];
    let (m, v, se_m, se_v) = sample_moments(&rewards);
    z.push((m - mu).abs() / se_m);
    z.push((v - 1.0 / kappa).abs() / se_v);
    z
}

/// A small posterior with some observed data, used for the moment checks.
pub fn observed_posterior() -> ube_core::posterior::MdpPosterior {
    use ube_core::posterior::{MdpPosterior, TransitionRecord};
    let mut post = MdpPosterior::new(3, 2, 0.9, &ndarray::arr1(&[1.0, 0.0, 0.0])).unwrap();
    let obs = [(0, 0, 0.5, 1, 3), (0, 0, -0.2, 2, 1), (0, 1, 1.0, 0, 2), (1, 0, 0.3, 2, 1)];
    for &(s, a, r, next, k) in &obs {
        let rec = TransitionRecord { state: s, action: a, reward: r, next_state: next, done: false };
        post.update(&rec, k).unwrap();
    }
    post
}

fn next_moments(p: &ndarray::ArrayView3<f64>, pi: &Array2<f64>, q: &Array2<f64>, s: usize, a: usize) -> (f64, f64) {
    let (s_n, a_n, _) = p.dim();
    let mut m = 0.0;
    let mut m2 = 0.0;
    for s2 in 0..s_n {
        for a2 in 0..a_n {
            let w = p[[s, a, s2]] * pi[[s2, a2]];
            m += w * q[[s2, a2]];
            m2 += w * q[[s2, a2]] * q[[s2, a2]];
        }
    }
    (m, m2 - m * m)
}

/// Next-state variance of the mean Q under the mean model, the posterior variance of its
/// expectation and the posterior mean of its per-model variance, all from the support.
pub fn independent_decomposition(
    posterior: &EnumeratedPosterior,
    policy: &Policy,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let pi = policy.probs().to_owned();
    let (q_mean, _) = brute_force_q_moments(posterior, policy);
    let members = posterior.members();
    let (s_n, a_n) = q_mean.dim();
    let mut p_bar = ndarray::Array3::<f64>::zeros(members[0].transition().dim());
    for (m, &wt) in members.iter().zip(posterior.weights()) {
        p_bar.scaled_add(wt, &m.transition());
    }
    let mut total = Array2::<f64>::zeros((s_n, a_n));
    let mut per_member_means = vec![Array2::<f64>::zeros((s_n, a_n)); members.len()];
    let mut aleatoric = Array2::<f64>::zeros((s_n, a_n));
    for s in 0..s_n {
        for a in 0..a_n {
            total[[s, a]] = next_moments(&p_bar.view(), &pi, &q_mean, s, a).1;
            for (i, (m, &wt)) in members.iter().zip(posterior.weights()).enumerate() {
                let (mu, var) = next_moments(&m.transition(), &pi, &q_mean, s, a);
                per_member_means[i][[s, a]] = mu;
                aleatoric[[s, a]] += wt * var;
            }
        }
    }
    let (_, epistemic) = weighted_moments(&per_member_means, posterior.weights());
    (total, epistemic, aleatoric)
}

/// Dense random MDP with one absorbing terminal state at the end when `terminal` is set.
pub fn random_mdp(seed: u64, s_n: usize, a_n: usize, discount: f64, terminal: bool) -> TabularMdp {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ndarray::Array3::<f64>::zeros((s_n, a_n, s_n));
    let mut r = Array2::<f64>::zeros((s_n, a_n));
    let mut mask = vec![false; s_n];
    if terminal {
        mask[s_n - 1] = true;
    }
    for s in 0..s_n {
        for a in 0..a_n {
            if mask[s] {
                p[[s, a, s]] = 1.0;
                continue;
            }
            let row: Vec<f64> = (0..s_n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = row.iter().sum();
            for (k, x) in row.into_iter().enumerate() {
                p[[s, a, k]] = x / total;
            }
            r[[s, a]] = rng.gen_range(-1.0..1.0);
        }
    }
    let mut rho = ndarray::Array1::<f64>::zeros(s_n);
    rho[0] = 1.0;
    TabularMdp::new(p, r, discount, rho, mask).unwrap()
}

pub fn random_policy(seed: u64, s_n: usize, a_n: usize) -> Policy {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Array2::<f64>::zeros((s_n, a_n));
    for mut row in probs.rows_mut() {
        row.mapv_inplace(|_| rng.gen_range(0.0..1.0));
        let total = row.sum();
        row /= total;
    }
    Policy::new(probs).unwrap()
}
