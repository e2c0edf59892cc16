use std::collections::BTreeMap;

use super::run::RunRecord;

/// First episode `t` (1-based) at which the sparse reward has been found in at least 10% of
/// episodes `1..=t`.
pub fn learning_time(found: &[bool]) -> Option<usize> {
    let mut hits = 0usize;
    for (i, &f) in found.iter().enumerate() {
        hits += f as usize;
        let t = i + 1;
        if hits * 10 >= t {
            return Some(t);
        }
    }
    None
}

/// Sample mean and standard error of the mean (`std / sqrt(n)` with Bessel's correction).
/// The standard error of a single value is 0.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Per-seed totals.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    pub total_regret: f64,
    pub learning_time: Option<usize>,
    pub found_episodes: usize,
}

/// Aggregate over the seeds of one (agent, estimator, env) group.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub agent: String,
    pub estimator: String,
    pub env: String,
    pub seeds: usize,
    pub episodes: usize,
    pub regret_mean: f64,
    pub regret_stderr: f64,
    /// Seeds that never reach the 10% threshold count as `episodes`.
    pub learning_time_mean: f64,
    pub learning_time_stderr: f64,
    /// Seeds that reached the 10% threshold.
    pub learned_seeds: usize,
    pub wall_ms_mean: f64,
}

/// Splits records by seed, keeping episode order.
pub fn by_seed(records: &[RunRecord]) -> BTreeMap<u64, Vec<&RunRecord>> {
    let mut out: BTreeMap<u64, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.seed).or_default().push(r);
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.episode);
    }
    out
}

pub fn seed_summaries(records: &[RunRecord]) -> Vec<SeedSummary> {
    by_seed(records)
        .into_iter()
        .map(|(seed, rs)| {
            let found: Vec<bool> = rs.iter().map(|r| r.reward_found).collect();
            SeedSummary {
                seed,
                episodes: rs.len(),
                total_regret: rs.last().map_or(0.0, |r| r.cum_regret),
                learning_time: learning_time(&found),
                found_episodes: found.iter().filter(|&&f| f).count(),
            }
        })
        .collect()
}

/// One summary per (agent, estimator, env) group, in sorted order.
pub fn summarize(records: &[RunRecord]) -> Vec<Summary> {
    let mut groups: BTreeMap<(String, String, String), Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.agent.clone(), r.estimator.clone(), r.env.clone()))
            .or_default()
            .push(r.clone());
    }
    groups
        .into_iter()
        .map(|((agent, estimator, env), rs)| {
            let seeds = seed_summaries(&rs);
            let regrets: Vec<f64> = seeds.iter().map(|s| s.total_regret).collect();
            let times: Vec<f64> = seeds
                .iter()
                .map(|s| s.learning_time.unwrap_or(s.episodes) as f64)
                .collect();
            let (regret_mean, regret_stderr) = mean_stderr(&regrets);
            let (learning_time_mean, learning_time_stderr) = mean_stderr(&times);
            Summary {
                agent,
                estimator,
                env,
                seeds: seeds.len(),
                episodes: seeds.iter().map(|s| s.episodes).max().unwrap_or(0),
                regret_mean,
                regret_stderr,
                learning_time_mean,
                learning_time_stderr,
                learned_seeds: seeds.iter().filter(|s| s.learning_time.is_some()).count(),
                wall_ms_mean: rs.iter().map(|r| r.wall_ms).sum::<f64>() / rs.len() as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_time_cases() {
        assert_eq!(learning_time(&[true; 5]), Some(1));
        assert_eq!(learning_time(&[false; 20]), None);
        let mut late = [false; 10];
        late[9] = true;
        assert_eq!(learning_time(&late), Some(10));
        assert_eq!(learning_time(&[]), None);
    }

    #[test]
    fn stderr_formula() {
        // Sample std of {1, 2, 3, 4} is sqrt(5/3).
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0_f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }
}
