mod common;

use common::{brute_force_q_moments, instance, observed_posterior};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ube_core::exploration::{ucb_policy_with, EnsembleRefresh, ExplorationConfig};
use ube_core::harness::{exact_ube_enumerated, mc_variance_oracle, MdpSampler};
use ube_core::mdp::{greedy_improvement, Policy};
use ube_core::variance::{build_ensemble, ensemble_variance, sample_members, MdpEnsemble};

#[test]
fn ensemble_mean_agrees_with_a_large_reference() {
    let post = observed_posterior();
    let policy = Policy::uniform(post.num_states(), post.num_actions());
    let reference = mc_variance_oracle(&post, &policy, 10_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let n = 500;
    let ens = build_ensemble(&post, &policy, n, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for ((&q, &m), &v) in ens.q_mean().0.iter().zip(reference.mean.iter()).zip(reference.variance.0.iter()) {
        let se = (v / n as f64 + v / 10_000.0).sqrt();
        assert!((q - m).abs() <= 4.0 * se + 1e-12, "{q} vs {m} (se {se})");
    }
}

#[test]
fn sampled_ensemble_variance_converges_to_enumeration() {
    let inst = instance(17);
    let (_, exact) = brute_force_q_moments(&inst.posterior, &inst.policy);
    let error = |n: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let members = (0..n).map(|_| inst.posterior.draw(&mut rng).unwrap()).collect();
        let ens = MdpEnsemble::from_samples(members, &inst.policy).unwrap();
        common::max_abs_diff(&ensemble_variance(&ens).0, &exact)
    };
    let (coarse, fine) = (error(100), error(20_000));
    assert!(fine < coarse, "{fine} !< {coarse}");
    let scale = exact.iter().cloned().fold(0.0, f64::max);
    assert!(fine < 0.05 * scale + 1e-12, "{fine} vs scale {scale}");
}

#[test]
fn exact_ube_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut outside, mut entries) = (0, 0);
    for seed in 100..110 {
        let inst = instance(seed);
        let u = exact_ube_enumerated(&inst.posterior, &inst.policy).unwrap();
        let mc = mc_variance_oracle(&inst.posterior, &inst.policy, 10_000, &mut rng).unwrap();
        for ((&x, &m), &se) in u.0.iter().zip(mc.variance.0.iter()).zip(mc.stderr.iter()) {
            entries += 1;
            if (x - m).abs() > 1e-10 && (x - m).abs() > 3.0 * se {
                outside += 1;
            }
        }
    }
    assert!(outside as f64 <= 0.01 * entries as f64 + 1.0, "{outside}/{entries} outside 3 se");
}

#[test]
fn zero_gain_is_policy_iteration_on_the_ensemble_mean() {
    let post = observed_posterior();
    let config = ExplorationConfig { lambda: 0.0, refresh: EnsembleRefresh::PerEpisode, ..Default::default() };
    let got = ucb_policy_with(&post, &config, None, &mut ChaCha8Rng::seed_from_u64(8), &mut ChaCha8Rng::seed_from_u64(9))
        .unwrap();

    let members = sample_members(&post, config.ensemble_size, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let mut ties = ChaCha8Rng::seed_from_u64(9);
    let mut policy = Policy::uniform(post.num_states(), post.num_actions());
    let mut ens = MdpEnsemble::from_samples(members, &policy).unwrap();
    for _ in 0..config.max_policy_iters {
        let next = greedy_improvement(ens.q_mean().values(), Some(&policy), &mut ties);
        if next == policy {
            break;
        }
        policy = next;
        ens = ens.reevaluate(&policy).unwrap();
    }
    assert_eq!(got.policy, policy);
}
