use std::fs;
use std::path::{Path, PathBuf};

use super::config::{AgentSpec, ExperimentConfig};
use super::metrics::{summarize, Summary};
use super::output::{write_records_csv, write_summary_csv};
use super::run::{run_experiment, RunRecord};
use crate::error::{Error, Result};
use crate::variance::Estimator;

/// Hyperparameter swept by [`ablate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    EnsembleSize(Vec<usize>),
    Lambda(Vec<f64>),
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::EnsembleSize(_) => "N",
            Sweep::Lambda(_) => "lambda",
        }
    }

    fn labels(&self) -> Vec<String> {
        match self {
            Sweep::EnsembleSize(v) => v.iter().map(|n| format!("N={n}")).collect(),
            Sweep::Lambda(v) => v.iter().map(|l| format!("lambda={l}")).collect(),
        }
    }
}

/// Results of one (parameter value, estimator) cell.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub param: String,
    pub estimator: Estimator,
    pub records: Vec<RunRecord>,
}

impl AblationCell {
    pub fn summary(&self) -> Summary {
        summarize(&self.records)
            .into_iter()
            .next()
            .expect("cell has records")
    }
}

/// Runs `base` once per (sweep value, estimator) pair. `base.agent` must be a UCB agent; its
/// other settings are kept.
pub fn ablate(base: &ExperimentConfig, estimators: &[Estimator], sweep: &Sweep) -> Result<Vec<AblationCell>> {
    let AgentSpec::Ucb { .. } = base.agent else {
        return Err(Error::Config("ablations sweep UCB agents only".into()));
    };
    if estimators.is_empty() {
        return Err(Error::Config("ablation needs at least one estimator".into()));
    }
    let count = match sweep {
        Sweep::EnsembleSize(v) => v.len(),
        Sweep::Lambda(v) => v.len(),
    };
    if count == 0 {
        return Err(Error::Config("ablation sweep is empty".into()));
    }
    let labels = sweep.labels();
    let mut cells = Vec::with_capacity(count * estimators.len());
    for (i, label) in labels.into_iter().enumerate() {
        for &est in estimators {
            let mut config = base.clone();
            if let AgentSpec::Ucb {
                estimator,
                lambda,
                ensemble_size,
                ..
            } = &mut config.agent
            {
                *estimator = est;
                match sweep {
                    Sweep::EnsembleSize(v) => *ensemble_size = v[i],
                    Sweep::Lambda(v) => *lambda = v[i],
                }
            }
            cells.push(AblationCell {
                param: label.clone(),
                estimator: est,
                records: run_experiment(&config)?,
            });
        }
    }
    Ok(cells)
}

/// Writes one run CSV per cell and a `matrix.csv` summary with one row per cell.
pub fn write_ablation(cells: &[AblationCell], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for cell in cells {
        let path = dir.join(format!("runs_{}_{}.csv", cell.param.replace('=', ""), cell.estimator));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_records_csv(&cell.records, file)?;
        written.push(path);
    }
    let rows: Vec<(String, Summary)> = cells.iter().map(|c| (c.param.clone(), c.summary())).collect();
    let matrix = dir.join("matrix.csv");
    let file = fs::File::create(&matrix).map_err(|e| Error::io(&matrix, e))?;
    write_summary_csv(&rows, file)?;
    written.push(matrix);
    Ok(written)
}
