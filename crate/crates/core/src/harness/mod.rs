//! Experiment runner: episode loop, metrics, Monte-Carlo oracle, ablations and outputs.

pub mod ablation;
pub mod config;
pub mod metrics;
pub mod oracle;
pub mod output;
pub mod run;

pub use ablation::{ablate, write_ablation, AblationCell, Sweep};
pub use config::{AgentSpec, ExperimentConfig};
pub use metrics::{learning_time, mean_stderr, seed_summaries, summarize, SeedSummary, Summary};
pub use oracle::{
    compare_with_oracle, enumerated_variance, exact_ube_enumerated, mc_variance_oracle,
    random_layered_instance, LayeredInstance, LayeredLimits, McVariance, MdpSampler,
};
pub use output::{emit_outputs, regret_svg, write_records_csv, write_summary_csv};
pub use run::{run_experiment, run_seed, run_seed_from, RunRecord, SeedStreams};
