use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ube_core::envs::{toy_mrp_fixture, EnvSpec};
use ube_core::exploration::EnsembleRefresh;
use ube_core::harness::{
    ablate, compare_with_oracle, emit_outputs, random_layered_instance, run_experiment, summarize,
    write_ablation, AgentSpec, ExperimentConfig, LayeredLimits, Sweep,
};
use ube_core::variance::{Estimator, ExactUbeVariant};

#[derive(Parser)]
#[command(name = "ube", version, about = "Tabular Bayesian RL with uncertainty Bellman equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an agent on an environment and write per-episode CSVs.
    Run(RunArgs),
    /// Print the uncertainty quantities of the four-state toy reward process.
    ToyTable,
    /// Compare exact-ube against Monte-Carlo posterior variance on random layered MDPs.
    OracleCheck(OracleArgs),
    /// Sweep ensemble size or exploration gain.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentKind {
    Ucb,
    Psrl,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefreshArg {
    PerStep,
    PerEpisode,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment, e.g. deepsea:L=10 or sevenroom.
    #[arg(long)]
    env: Option<String>,
    #[arg(long, value_enum)]
    agent: Option<AgentKind>,
    /// exact-ube, pombu or ensemble-var.
    #[arg(long)]
    estimator: Option<String>,
    /// exact-ube variant (1, 2 or 3).
    #[arg(long)]
    variant: Option<u8>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    umin: Option<f64>,
    /// Ensemble size.
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Times each observed transition is counted.
    #[arg(long)]
    repeat: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    refresh: Option<RefreshArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a regret plot.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    #[value(name = "N")]
    N,
    Lambda,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    sweep: SweepKind,
    /// Comma-separated values; defaults to 2,5,10 for N and 0.5,1,2 for lambda.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Comma-separated estimators.
    #[arg(long, value_delimiter = ',', default_value = "exact-ube,pombu,ensemble-var")]
    estimators: Vec<String>,
    #[command(flatten)]
    run: RunArgs,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let env: EnvSpec = args
                .env
                .as_deref()
                .context("--env is required without --config")?
                .parse()?;
            ExperimentConfig::new(env, AgentSpec::ucb(Estimator::ExactUbe(ExactUbeVariant::Three)))
        }
    };
    if let Some(env) = &args.env {
        config.env = env.parse()?;
    }
    match args.agent {
        Some(AgentKind::Psrl) if !matches!(config.agent, AgentSpec::Psrl { .. }) => {
            config.agent = AgentSpec::psrl();
        }
        Some(AgentKind::Ucb) if !matches!(config.agent, AgentSpec::Ucb { .. }) => {
            config.agent = AgentSpec::ucb(Estimator::ExactUbe(ExactUbeVariant::Three));
        }
        _ => {}
    }
    if let AgentSpec::Ucb {
        estimator,
        lambda,
        u_min,
        ensemble_size,
        refresh,
        ..
    } = &mut config.agent
    {
        if let Some(name) = &args.estimator {
            *estimator = name.parse()?;
        }
        if let Some(v) = args.variant {
            if !matches!(estimator, Estimator::ExactUbe(_)) {
                bail!("--variant applies to the exact-ube estimator only");
            }
            *estimator = Estimator::ExactUbe(ExactUbeVariant::from_index(v)?);
        }
        if let Some(l) = args.lambda {
            *lambda = l;
        }
        if let Some(u) = args.umin {
            *u_min = Some(u);
        }
        if let Some(n) = args.ensemble {
            *ensemble_size = n;
        }
        if let Some(r) = args.refresh {
            *refresh = match r {
                RefreshArg::PerStep => EnsembleRefresh::PerStep,
                RefreshArg::PerEpisode => EnsembleRefresh::PerEpisode,
            };
        }
    } else if args.estimator.is_some() || args.variant.is_some() || args.lambda.is_some() {
        bail!("estimator options apply to the ucb agent only");
    }
    if let Some(t) = args.episodes {
        config.episodes = t;
    }
    if let Some(seeds) = &args.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(r) = args.repeat {
        config.repeat = Some(r);
    }
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    config.plot |= args.plot;
    config.validate()?;
    Ok(config)
}

fn print_summaries(records: &[ube_core::harness::RunRecord]) {
    for s in summarize(records) {
        println!(
            "{} {} on {}: total regret {:.2} ± {:.2}, learning time {:.1} ± {:.1} ({}/{} seeds learned)",
            s.agent,
            s.estimator,
            s.env,
            s.regret_mean,
            s.regret_stderr,
            s.learning_time_mean,
            s.learning_time_stderr,
            s.learned_seeds,
            s.seeds
        );
    }
}

fn run(args: &RunArgs) -> Result<()> {
    let config = build_config(args)?;
    let records = run_experiment(&config)?;
    print_summaries(&records);
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    for path in emit_outputs(&records, &dir, config.plot)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn oracle_check(args: &OracleArgs) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst_z: f64 = 0.0;
    let mut outside = 0;
    let mut entries = 0;
    let mut worst_exact: f64 = 0.0;
    for _ in 0..args.instances {
        let inst = random_layered_instance(&mut rng, LayeredLimits::default())?;
        let cmp = compare_with_oracle(&inst, args.samples, &mut rng)?;
        worst_z = worst_z.max(cmp.max_z);
        outside += cmp.outside_3se;
        entries += cmp.entries;
        worst_exact = worst_exact.max(cmp.max_exact_error);
    }
    println!(
        "{} instances, {} samples each: {}/{} entries outside 3 standard errors (max z {:.2}); \
         max deviation from enumerated variance {:.2e}",
        args.instances, args.samples, outside, entries, worst_z, worst_exact
    );
    // Roughly 0.3% of entries fall outside 3 standard errors by chance alone.
    Ok(worst_exact < 1e-8 && (outside as f64) <= 0.01 * entries as f64 + 1.0)
}

fn ablation(args: &AblateArgs) -> Result<()> {
    let mut config = build_config(&args.run)?;
    if matches!(config.agent, AgentSpec::Psrl { .. }) {
        config.agent = AgentSpec::ucb(Estimator::ExactUbe(ExactUbeVariant::Three));
    }
    let sweep = match args.sweep {
        SweepKind::N => {
            let values = args.values.clone().unwrap_or_else(|| vec![2.0, 5.0, 10.0]);
            let sizes = values
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && v >= 2.0 {
                        Ok(v as usize)
                    } else {
                        bail!("ensemble sizes must be integers >= 2, got {v}")
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Sweep::EnsembleSize(sizes)
        }
        SweepKind::Lambda => Sweep::Lambda(args.values.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0])),
    };
    let estimators = args
        .estimators
        .iter()
        .map(|e| e.parse::<Estimator>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let cells = ablate(&config, &estimators, &sweep)?;
    for cell in &cells {
        let s = cell.summary();
        println!(
            "{} {}: total regret {:.2} ± {:.2}, learning time {:.1}",
            cell.param, cell.estimator, s.regret_mean, s.regret_stderr, s.learning_time_mean
        );
    }
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("out/ablation"));
    for path in write_ablation(&cells, &dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args).map(|_| true),
        Command::ToyTable => toy_mrp_fixture()
            .table()
            .map(|t| {
                print!("{t}");
                true
            })
            .map_err(Into::into),
        Command::OracleCheck(args) => oracle_check(args),
        Command::Ablate(args) => ablation(args).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
