use proptest::prelude::*;
use ube_core::envs::{optimal_return, EnvSpec};
use ube_core::harness::{
    ablate, emit_outputs, learning_time, run_experiment, run_seed_from, summarize, write_ablation,
    AgentSpec, ExperimentConfig, RunRecord, Sweep,
};
use ube_core::posterior::{MdpPosterior, TransitionRecord};
use ube_core::variance::{Estimator, ExactUbeVariant};

fn small(agent: AgentSpec) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(EnvSpec::DeepSea { size: 4 }, agent);
    config.episodes = 12;
    config.seeds = vec![0, 1];
    config
}

fn exact() -> AgentSpec {
    AgentSpec::ucb(Estimator::ExactUbe(ExactUbeVariant::Three))
}

fn strip_time(records: &[RunRecord]) -> Vec<RunRecord> {
    records.iter().cloned().map(|r| RunRecord { wall_ms: 0.0, ..r }).collect()
}

#[test]
fn runs_are_reproducible_per_seed() {
    for agent in [exact(), AgentSpec::psrl()] {
        let config = small(agent);
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(strip_time(&a), strip_time(&b));
        // A seed's results do not depend on which other seeds run.
        let mut only_one = config.clone();
        only_one.seeds = vec![1];
        let c = run_experiment(&only_one).unwrap();
        assert_eq!(strip_time(&c), strip_time(&a[12..]));
    }
}

#[test]
fn records_are_complete_and_consistent() {
    let config = small(AgentSpec::ucb(Estimator::Pombu));
    let records = run_experiment(&config).unwrap();
    assert_eq!(records.len(), 24);
    for seed_records in records.chunks(12) {
        let mut total = 0.0;
        for (i, r) in seed_records.iter().enumerate() {
            assert_eq!(r.episode, i + 1);
            assert!(r.regret >= 0.0 && r.regret <= 1.0 + 1e-12);
            total += r.regret;
            assert!((r.cum_regret - total).abs() < 1e-9);
            assert_eq!(r.env, "deepsea:L=4");
            assert_eq!(r.estimator, "pombu");
        }
    }
}

#[test]
fn a_confident_correct_posterior_has_no_regret() {
    let config = small(exact());
    let env = config.env.build().unwrap();
    let truth = env.true_mdp(1.0).unwrap();
    let mut post = MdpPosterior::new(env.num_states(), 2, config.gamma, &env.initial_dist()).unwrap();
    for s in 0..env.num_states() {
        for a in 0..2 {
            let step = env.step(s, a, &mut rand::rngs::mock::StepRng::new(0, 0));
            let rec = TransitionRecord { state: s, action: a, reward: step.reward, next_state: step.next_state, done: step.done };
            post.update(&rec, 1_000_000).unwrap();
        }
    }
    let best = optimal_return(env.as_ref()).unwrap();
    let records = run_seed_from(&config, env.as_ref(), &truth, best, 0, post).unwrap();
    assert!(records.iter().all(|r| r.regret < 1e-12 && r.reward_found));
    assert_eq!(learning_time(&records.iter().map(|r| r.reward_found).collect::<Vec<_>>()), Some(1));
}

#[test]
fn outputs_have_one_row_per_episode() {
    let config = small(exact());
    let records = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_outputs(&records, dir.path(), true).unwrap();
    assert_eq!(paths.len(), 3);
    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    let mut lines = runs.lines();
    assert_eq!(lines.next().unwrap(), "seed,episode,return,regret,cum_regret,reward_found,agent,estimator,env");
    assert_eq!(lines.count(), 24);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    let svg = std::fs::read_to_string(dir.path().join("regret_deepsea_L_4.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn ablation_fills_every_cell() {
    let mut config = small(exact());
    config.episodes = 3;
    config.seeds = vec![0];
    let estimators = [Estimator::ExactUbe(ExactUbeVariant::Three), Estimator::EnsembleVar];
    let cells = ablate(&config, &estimators, &Sweep::Lambda(vec![0.5, 1.0, 2.0])).unwrap();
    assert_eq!(cells.len(), 6);
    let dir = tempfile::tempdir().unwrap();
    let written = write_ablation(&cells, dir.path()).unwrap();
    assert_eq!(written.len(), 7);
    let matrix = std::fs::read_to_string(dir.path().join("matrix.csv")).unwrap();
    assert_eq!(matrix.lines().count(), 7);
    assert!(ablate(&small(AgentSpec::psrl()), &estimators, &Sweep::EnsembleSize(vec![2])).is_err());
}

#[test]
fn config_files_round_trip_and_reject_unknown_keys() {
    let mut config = small(AgentSpec::ucb(Estimator::ExactUbe(ExactUbeVariant::One)));
    config.repeat = Some(3);
    let text = config.to_toml_string().unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), config);
    assert!(ExperimentConfig::from_toml_str(&format!("{text}\nbogus = 1\n")).is_err());
}

proptest! {
    #[test]
    fn learning_time_is_the_first_episode_past_the_threshold(found in prop::collection::vec(any::<bool>(), 1..60)) {
        let lt = learning_time(&found);
        // Brute force over every candidate episode.
        let expected = (1..=found.len()).find(|&t| {
            let hits = found[..t].iter().filter(|&&f| f).count();
            hits as f64 >= 0.1 * t as f64 && hits > 0
        });
        prop_assert_eq!(lt, expected);
    }
}

#[test]
fn summaries_group_by_agent_and_estimator() {
    let mut records = run_experiment(&small(exact())).unwrap();
    records.extend(run_experiment(&small(AgentSpec::psrl())).unwrap());
    let s = summarize(&records);
    assert_eq!(s.len(), 2);
    assert!(s.iter().all(|x| x.seeds == 2 && x.episodes == 12));
}
