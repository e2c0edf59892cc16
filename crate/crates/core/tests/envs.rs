use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ube_core::envs::deepsea::{DeepSea, RIGHT};
use ube_core::envs::sevenroom::{SevenRoom, DOWN, LEFT, UP};
use ube_core::envs::{optimal_return, EnvSpec, Environment};

// Upper 0.1% quantiles of the chi-square distribution with 1..=5 degrees of freedom.
const CHI2_999: [f64; 5] = [10.83, 13.82, 16.27, 18.47, 20.52];

fn chi_square(env: &dyn Environment, state: usize, action: usize, draws: usize, seed: u64) -> (f64, usize) {
    let mdp = env.true_mdp(1.0).unwrap();
    let mut counts = vec![0usize; mdp.num_states()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        counts[env.step(state, action, &mut rng).next_state] += 1;
    }
    let mut stat = 0.0;
    let mut cells = 0;
    for (s2, &c) in counts.iter().enumerate() {
        let p = mdp.transition()[[state, action, s2]];
        if p == 0.0 {
            assert_eq!(c, 0, "step reached {s2}, which has zero model probability");
            continue;
        }
        let expected = p * draws as f64;
        stat += (c as f64 - expected).powi(2) / expected;
        cells += 1;
    }
    (stat, cells - 1)
}

#[test]
fn sevenroom_steps_follow_the_model() {
    let env = SevenRoom::new();
    let doorway = env.state_at(2, 5).unwrap();
    let corner = env.state_at(0, 0).unwrap();
    let cases = [(env.start(), UP), (doorway, LEFT), (corner, DOWN), (env.state_at(4, 16).unwrap(), RIGHT)];
    for (i, &(s, a)) in cases.iter().enumerate() {
        let (stat, df) = chi_square(&env, s, a, 20_000, i as u64);
        assert!(df >= 1 && stat < CHI2_999[df - 1], "state {s} action {a}: chi2 {stat} with {df} dof");
    }
}

#[test]
fn sevenroom_intended_moves_dominate() {
    let env = SevenRoom::new();
    let s = env.start();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = env.state_at(2, 21).unwrap();
    let n = 100_000;
    let hits = (0..n).filter(|_| env.step(s, RIGHT, &mut rng).next_state == target).count();
    // 0.95 for the intended move plus a quarter of the slip mass.
    let p = 0.95 + 0.05 / 4.0;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((hits as f64 / n as f64 - p).abs() < 3.0 * se);
}

#[test]
fn sevenroom_goal_is_absorbing_and_rewarding() {
    let env = SevenRoom::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for a in 0..4 {
        let step = env.step(env.goal(), a, &mut rng);
        assert_eq!(step.next_state, env.goal());
        assert_eq!(step.reward, 1.0);
        assert!(!step.done);
    }
    let best = optimal_return(&env).unwrap();
    // The goal is 18 moves from the start, leaving at most 22 rewarded steps.
    assert!(best > 10.0 && best < 22.0, "optimal return {best}");
}

#[test]
fn deepsea_optimal_return_is_the_reward_minus_total_cost() {
    for l in [2, 5, 10, 20] {
        let env = DeepSea::new(l).unwrap();
        assert!((optimal_return(&env).unwrap() - 0.99).abs() < 1e-12);
    }
}

#[test]
fn spec_strings_parse_and_build() {
    let env = "deepsea:L=7".parse::<EnvSpec>().unwrap().build().unwrap();
    assert_eq!(env.num_states(), 49);
    assert_eq!("sevenroom".parse::<EnvSpec>().unwrap().build().unwrap().num_states(), 181);
    assert!("toymrp".parse::<EnvSpec>().unwrap().build().is_err());
    assert!("deepsea:L=1".parse::<EnvSpec>().unwrap().build().is_err());
    assert!("gridworld".parse::<EnvSpec>().is_err());
}

proptest! {
    #[test]
    fn deepsea_model_matches_steps(l in 2usize..12, s in 0usize..144, a in 0usize..2) {
        let env = DeepSea::new(l).unwrap();
        let s = s % env.num_states();
        let mdp = env.true_mdp(1.0).unwrap();
        let step = env.step(s, a, &mut ChaCha8Rng::seed_from_u64(0));
        prop_assert_eq!(mdp.transition()[[s, a, step.next_state]], 1.0);
        prop_assert_eq!(mdp.reward()[[s, a]], step.reward);
        prop_assert_eq!(step.done, step.next_state == env.num_states());
        prop_assert_eq!(env.is_goal(s, a, step.next_state), step.reward > 0.5);
    }

    #[test]
    fn sevenroom_only_moves_to_neighbours(s in 0usize..181, a in 0usize..4, seed in any::<u64>()) {
        let env = SevenRoom::new();
        let step = env.step(s, a, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(step.next_state == s || env.neighbors(s).contains(&step.next_state));
    }
}
