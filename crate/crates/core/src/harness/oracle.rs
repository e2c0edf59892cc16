use ndarray::{Array1, Array2, Array3, Zip};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::mdp::{solve_q_values, Policy, TabularMdp};
use crate::posterior::MdpPosterior;
use crate::variance::{
    ensemble_variance, exact_ube_rewards, solve_ube, EnumeratedPosterior, ExactUbeVariant, UValues,
};

/// Anything that can draw MDPs.
pub trait MdpSampler {
    fn draw(&self, rng: &mut dyn RngCore) -> Result<TabularMdp>;
}

impl MdpSampler for MdpPosterior {
    fn draw(&self, rng: &mut dyn RngCore) -> Result<TabularMdp> {
        self.sample_mdp(rng)
    }
}

impl MdpSampler for EnumeratedPosterior {
    fn draw(&self, rng: &mut dyn RngCore) -> Result<TabularMdp> {
        let x: f64 = rng.gen();
        let mut acc = 0.0;
        for (m, &w) in self.members().iter().zip(self.weights()) {
            acc += w;
            if x < acc {
                return Ok(m.clone());
            }
        }
        Ok(self.members()[self.members().len() - 1].clone())
    }
}

/// Monte-Carlo estimate of the posterior variance of Q.
#[derive(Debug, Clone)]
pub struct McVariance {
    pub mean: Array2<f64>,
    /// Unbiased sample variance.
    pub variance: UValues,
    /// Estimated standard error of `variance`.
    pub stderr: Array2<f64>,
    pub samples: usize,
}

/// Draws `samples` MDPs, solves Q under `policy` for each and returns the elementwise sample
/// variance with its standard error.
pub fn mc_variance_oracle<P: MdpSampler + ?Sized>(
    posterior: &P,
    policy: &Policy,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<McVariance> {
    if samples < 2 {
        return Err(Error::InsufficientSamples { required: 2, got: samples });
    }
    let qs = (0..samples)
        .map(|_| {
            let mdp = posterior.draw(rng)?;
            Ok(solve_q_values(&mdp, policy)?.1 .0)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = samples as f64;
    let dim = qs[0].dim();
    let mut mean = Array2::<f64>::zeros(dim);
    for q in &qs {
        mean += q;
    }
    mean /= n;
    let mut m2 = Array2::<f64>::zeros(dim);
    let mut m4 = Array2::<f64>::zeros(dim);
    for q in &qs {
        Zip::from(&mut m2).and(&mut m4).and(q).and(&mean).for_each(|a, b, &x, &m| {
            let d2 = (x - m) * (x - m);
            *a += d2;
            *b += d2 * d2;
        });
    }
    let variance = &m2 / (n - 1.0);
    let mut stderr = Array2::<f64>::zeros(dim);
    Zip::from(&mut stderr).and(&variance).and(&m4).for_each(|se, &s2, &s4| {
        let mu4 = s4 / n;
        *se = ((mu4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
    });
    Ok(McVariance {
        mean,
        variance: UValues(variance),
        stderr,
        samples,
    })
}

/// Exact posterior variance of Q by enumeration of a finite support.
pub fn enumerated_variance(posterior: &EnumeratedPosterior, policy: &Policy) -> Result<UValues> {
    Ok(ensemble_variance(&posterior.ensemble(policy)?))
}

/// Exact-ube estimate by enumeration: unclipped rewards, solved on the mean MDP.
pub fn exact_ube_enumerated(posterior: &EnumeratedPosterior, policy: &Policy) -> Result<UValues> {
    let ens = posterior.ensemble(policy)?;
    let mean = posterior.mean_mdp()?;
    let u = exact_ube_rewards(&ens, &mean, policy, ExactUbeVariant::Three)?;
    solve_ube(&mean, policy, &u, posterior.reward_variance().view())
}

/// Size limits for [`random_layered_instance`].
#[derive(Debug, Clone, Copy)]
pub struct LayeredLimits {
    pub max_layers: usize,
    pub max_width: usize,
    pub max_actions: usize,
    pub max_support: usize,
}

impl Default for LayeredLimits {
    fn default() -> Self {
        Self {
            max_layers: 6,
            max_width: 4,
            max_actions: 3,
            max_support: 64,
        }
    }
}

/// A finite posterior over layered MDPs together with a stochastic policy.
#[derive(Debug, Clone)]
pub struct LayeredInstance {
    pub posterior: EnumeratedPosterior,
    pub policy: Policy,
    /// First state of each layer, followed by the terminal index.
    pub layer_starts: Vec<usize>,
}

fn random_row<R: Rng + ?Sized>(rng: &mut R, targets: &[usize], len: usize) -> Array1<f64> {
    let mut row = Array1::zeros(len);
    // Sparse rows exercise deterministic transitions too.
    let keep = rng.gen_range(1..=targets.len());
    let mut picked: Vec<usize> = targets.to_vec();
    for i in 0..keep {
        let j = rng.gen_range(i..picked.len());
        picked.swap(i, j);
    }
    for &t in &picked[..keep] {
        row[t] = rng.gen_range(0.05..1.0);
    }
    let total = row.sum();
    row / total
}

/// Random acyclic layered MDP family whose members differ only in the transition rows of a
/// few states, with independent per-state alternatives. Every state is visited at most once
/// per episode and uncertainty is independent across states.
pub fn random_layered_instance<R: Rng + ?Sized>(
    rng: &mut R,
    limits: LayeredLimits,
) -> Result<LayeredInstance> {
    let layers = rng.gen_range(2..=limits.max_layers.max(2));
    let widths: Vec<usize> = (0..layers).map(|_| rng.gen_range(1..=limits.max_width)).collect();
    let a_n = rng.gen_range(1..=limits.max_actions);
    let mut layer_starts = vec![0];
    for w in &widths {
        layer_starts.push(layer_starts.last().unwrap() + w);
    }
    let terminal = *layer_starts.last().unwrap();
    let s_n = terminal + 1;
    let layer_of = |s: usize| layer_starts.iter().rposition(|&b| b <= s).unwrap();
    let successors = |s: usize| -> Vec<usize> {
        let k = layer_of(s);
        if k + 1 < layers {
            let mut next: Vec<usize> = (layer_starts[k + 1]..layer_starts[k + 2]).collect();
            if rng_flag(s) {
                next.push(terminal);
            }
            next
        } else {
            vec![terminal]
        }
    };

    let rows_for = |rng: &mut R, s: usize| -> Array2<f64> {
        let targets = successors(s);
        let mut out = Array2::zeros((a_n, s_n));
        for a in 0..a_n {
            out.row_mut(a).assign(&random_row(rng, &targets, s_n));
        }
        out
    };

    let mut base = Array3::<f64>::zeros((s_n, a_n, s_n));
    for s in 0..terminal {
        base.slice_mut(ndarray::s![s, .., ..]).assign(&rows_for(rng, s));
    }
    base[[terminal, 0, terminal]] = 1.0;
    for a in 1..a_n {
        base[[terminal, a, terminal]] = 1.0;
    }
    let mut reward = Array2::<f64>::zeros((s_n, a_n));
    for s in 0..terminal {
        for a in 0..a_n {
            reward[[s, a]] = rng.gen_range(-1.0..1.0);
        }
    }
    let discount = if rng.gen_bool(0.25) { 1.0 } else { rng.gen_range(0.5..1.0) };
    let mut rho = Array1::<f64>::zeros(s_n);
    for s in 0..widths[0] {
        rho[s] = rng.gen_range(0.1..1.0);
    }
    rho /= rho.sum();
    let term_mask: Vec<bool> = (0..s_n).map(|s| s == terminal).collect();

    // Uncertain states, each with 2 or 3 weighted alternatives, support size bounded.
    let mut order: Vec<usize> = (0..terminal).collect();
    for i in 0..order.len() {
        let j = rng.gen_range(i..order.len());
        order.swap(i, j);
    }
    let mut uncertain: Vec<(usize, Vec<Array2<f64>>, Vec<f64>)> = Vec::new();
    let mut support = 1usize;
    for &s in &order {
        let k = if rng.gen_bool(0.3) { 3 } else { 2 };
        if support * k > limits.max_support {
            continue;
        }
        if !uncertain.is_empty() && rng.gen_bool(0.2) {
            continue;
        }
        support *= k;
        let alts: Vec<Array2<f64>> = (0..k).map(|_| rows_for(rng, s)).collect();
        let mut w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        uncertain.push((s, alts, w));
    }

    let mut members = Vec::with_capacity(support);
    let mut weights = Vec::with_capacity(support);
    let mut choice = vec![0usize; uncertain.len()];
    loop {
        let mut t = base.clone();
        let mut w = 1.0;
        for (i, (s, alts, ws)) in uncertain.iter().enumerate() {
            t.slice_mut(ndarray::s![*s, .., ..]).assign(&alts[choice[i]]);
            w *= ws[choice[i]];
        }
        members.push(TabularMdp::new(t, reward.clone(), discount, rho.clone(), term_mask.clone())?);
        weights.push(w);
        // Odometer increment over the product support.
        let mut i = 0;
        while i < choice.len() {
            choice[i] += 1;
            if choice[i] < uncertain[i].1.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
        if i == choice.len() {
            break;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut probs = Array2::<f64>::zeros((s_n, a_n));
    for s in 0..s_n {
        for a in 0..a_n {
            probs[[s, a]] = rng.gen_range(0.05..1.0);
        }
        let total = probs.row(s).sum();
        probs.row_mut(s).mapv_inplace(|x| x / total);
    }
    Ok(LayeredInstance {
        posterior: EnumeratedPosterior::new(members, weights)?,
        policy: Policy::new(probs)?,
        layer_starts,
    })
}

/// Deterministic per-state choice of whether a state may also end the episode early.
fn rng_flag(s: usize) -> bool {
    s % 3 == 1
}

const ABS_TOL: f64 = 1e-10;

/// Agreement between the exact-ube solution and a Monte-Carlo oracle on one instance.
#[derive(Debug, Clone, Copy)]
pub struct OracleComparison {
    /// Largest `|U - mc| / stderr` over entries that differ by more than round-off.
    pub max_z: f64,
    /// Entries whose difference exceeds three standard errors.
    pub outside_3se: usize,
    pub entries: usize,
    /// Largest `|U - exact enumerated variance|`.
    pub max_exact_error: f64,
}

pub fn compare_with_oracle(
    instance: &LayeredInstance,
    samples: usize,
    rng: &mut dyn RngCore,
) -> Result<OracleComparison> {
    let u = exact_ube_enumerated(&instance.posterior, &instance.policy)?;
    let exact = enumerated_variance(&instance.posterior, &instance.policy)?;
    let mc = mc_variance_oracle(&instance.posterior, &instance.policy, samples, rng)?;
    let mut max_z: f64 = 0.0;
    let mut outside = 0;
    for ((&ub, &m), &se) in u.0.iter().zip(mc.variance.0.iter()).zip(mc.stderr.iter()) {
        let diff = (ub - m).abs();
        // Entries that are zero up to round-off have meaningless standard errors.
        if diff <= ABS_TOL {
            continue;
        }
        let z = if se > 0.0 { diff / se } else { f64::INFINITY };
        max_z = max_z.max(z);
        if z > 3.0 {
            outside += 1;
        }
    }
    let max_exact_error = (&u.0 - &exact.0).iter().fold(0.0_f64, |a, d| a.max(d.abs()));
    Ok(OracleComparison {
        max_z,
        outside_3se: outside,
        entries: u.0.len(),
        max_exact_error,
    })
}
