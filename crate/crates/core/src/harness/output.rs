use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::metrics::{summarize, Summary};
use super::run::RunRecord;
use crate::error::{Error, Result};

pub const RECORD_HEADER: [&str; 9] = [
    "seed",
    "episode",
    "return",
    "regret",
    "cum_regret",
    "reward_found",
    "agent",
    "estimator",
    "env",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "agent",
    "estimator",
    "env",
    "seeds",
    "episodes",
    "regret_mean",
    "regret_stderr",
    "learning_time_mean",
    "learning_time_stderr",
    "learned_seeds",
    "wall_ms_mean",
    "param",
];

pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.seed.to_string(),
            r.episode.to_string(),
            r.episode_return.to_string(),
            r.regret.to_string(),
            r.cum_regret.to_string(),
            (r.reward_found as u8).to_string(),
            r.agent.clone(),
            r.estimator.clone(),
            r.env.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Writes summaries, each tagged with a free-form parameter label (empty for plain runs).
pub fn write_summary_csv<W: Write>(rows: &[(String, Summary)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for (param, s) in rows {
        w.write_record([
            s.agent.clone(),
            s.estimator.clone(),
            s.env.clone(),
            s.seeds.to_string(),
            s.episodes.to_string(),
            s.regret_mean.to_string(),
            s.regret_stderr.to_string(),
            s.learning_time_mean.to_string(),
            s.learning_time_stderr.to_string(),
            s.learned_seeds.to_string(),
            format!("{:.3}", s.wall_ms_mean),
            param.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Mean cumulative regret per episode for each (agent, estimator) group of one environment.
fn mean_curves(records: &[RunRecord]) -> BTreeMap<String, Vec<f64>> {
    let mut sums: BTreeMap<String, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for r in records {
        let key = if r.agent == "psrl" {
            r.agent.clone()
        } else {
            format!("{} {}", r.agent, r.estimator)
        };
        let (sum, count) = sums.entry(key).or_default();
        if sum.len() < r.episode {
            sum.resize(r.episode, 0.0);
            count.resize(r.episode, 0);
        }
        sum[r.episode - 1] += r.cum_regret;
        count[r.episode - 1] += 1;
    }
    sums.into_iter()
        .map(|(k, (sum, count))| {
            let curve = sum
                .iter()
                .zip(&count)
                .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
                .collect();
            (k, curve)
        })
        .collect()
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line plot of mean cumulative regret against episode as a standalone SVG document.
pub fn regret_svg(records: &[RunRecord], title: &str) -> String {
    let curves = mean_curves(records);
    let (w, h, margin) = (640.0, 400.0, 50.0);
    let max_t = curves.values().map(Vec::len).max().unwrap_or(1).max(1) as f64;
    let max_y = curves
        .values()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let x = |t: f64| margin + (w - 2.0 * margin) * t / max_t;
    let y = |v: f64| h - margin - (h - 2.0 * margin) * v / max_y;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, title);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {m} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = margin,
        b = h - margin,
        r = w - margin
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">episode (max {})</text>"#,
        w / 2.0,
        h - 15.0,
        max_t
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">cumulative regret (max {:.2})</text>"#,
        h / 2.0,
        h / 2.0,
        max_y
    );
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = curve
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(t, &v)| format!("{:.1},{:.1}", x((t + 1) as f64), y(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            points.join(" "),
            color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            margin + 10.0,
            margin + 15.0 * (i + 1) as f64,
            color,
            name
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn file_stem(env: &str) -> String {
    env.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Writes `runs.csv`, `summary.csv` and, if `plot`, one `regret_<env>.svg` per environment
/// into `dir`. Returns the written paths.
pub fn emit_outputs(records: &[RunRecord], dir: &Path, plot: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let runs = dir.join("runs.csv");
    let file = fs::File::create(&runs).map_err(|e| Error::io(&runs, e))?;
    write_records_csv(records, file)?;
    written.push(runs);

    let summary = dir.join("summary.csv");
    let rows: Vec<(String, Summary)> =
        summarize(records).into_iter().map(|s| (String::new(), s)).collect();
    let file = fs::File::create(&summary).map_err(|e| Error::io(&summary, e))?;
    write_summary_csv(&rows, file)?;
    written.push(summary);

    if plot {
        let mut by_env: BTreeMap<&str, Vec<RunRecord>> = BTreeMap::new();
        for r in records {
            by_env.entry(&r.env).or_default().push(r.clone());
        }
        for (env, rs) in by_env {
            let path = dir.join(format!("regret_{}.svg", file_stem(env)));
            fs::write(&path, regret_svg(&rs, env)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
