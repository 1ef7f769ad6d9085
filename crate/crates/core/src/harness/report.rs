// CSV output. UTF-8, LF line endings, accuracies rendered with four decimals.

use std::fmt::Write as _;
use std::path::Path;

use super::{FailedCell, RunResult};
use crate::error::Result;

pub fn format_accuracy(v: f64) -> String {
    format!("{v:.4}")
}

/// Mean and sample (n - 1) standard deviation; the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    pub n_labeled: usize,
    /// `(name, fingerprint)` for ablation rows.
    pub policy: Option<(String, String)>,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Groups by `(dataset, method, n_labeled, policy)` in order of first appearance.
pub fn aggregate(results: &[RunResult]) -> Vec<AggregateRow> {
    let mut groups: Vec<(AggregateRow, Vec<f64>)> = Vec::new();
    for r in results {
        let found = groups.iter_mut().find(|(g, _)| {
            g.dataset == r.dataset && g.method == r.method && g.n_labeled == r.n_labeled && g.policy == r.policy
        });
        match found {
            Some((_, accs)) => accs.push(r.accuracy),
            None => groups.push((
                AggregateRow {
                    dataset: r.dataset.clone(),
                    method: r.method.clone(),
                    n_labeled: r.n_labeled,
                    policy: r.policy.clone(),
                    mean: 0.0,
                    std: 0.0,
                    count: 0,
                },
                vec![r.accuracy],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut row, accs)| {
            (row.mean, row.std) = mean_std(&accs);
            row.count = accs.len();
            row
        })
        .collect()
}

pub fn grid_csv(results: &[RunResult]) -> String {
    let mut s = String::from("dataset,method,n_labeled,seed,accuracy,wall_time_s\n");
    for r in results {
        let wall = r.wall_time_s.map(|t| format!("{t:.3}")).unwrap_or_default();
        writeln!(s, "{},{},{},{},{},{wall}", r.dataset, r.method, r.n_labeled, r.seed, format_accuracy(r.accuracy)).unwrap();
    }
    s
}

pub fn grid_agg_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("dataset,method,n_labeled,mean,std\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.dataset, r.method, r.n_labeled, format_accuracy(r.mean), format_accuracy(r.std)).unwrap();
    }
    s
}

fn policy_cols(p: &Option<(String, String)>) -> (&str, &str) {
    p.as_ref().map_or(("", ""), |(n, f)| (n.as_str(), f.as_str()))
}

pub fn ablation_csv(results: &[RunResult]) -> String {
    let mut s = String::from("dataset,policy,fingerprint,n_labeled,seed,accuracy\n");
    for r in results {
        let (name, print) = policy_cols(&r.policy);
        writeln!(s, "{},{name},{print},{},{},{}", r.dataset, r.n_labeled, r.seed, format_accuracy(r.accuracy)).unwrap();
    }
    s
}

pub fn ablation_agg_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("dataset,policy,fingerprint,mean,std\n");
    for r in rows {
        let (name, print) = policy_cols(&r.policy);
        writeln!(s, "{},{name},{print},{},{}", r.dataset, format_accuracy(r.mean), format_accuracy(r.std)).unwrap();
    }
    s
}

pub fn failed_csv(failed: &[FailedCell]) -> String {
    let mut s = String::from("method,n_labeled,seed,policy,error\n");
    for f in failed {
        let err = f.error.replace([',', '\n', '\r'], " ");
        writeln!(s, "{},{},{},{},{err}", f.method, f.n_labeled, f.seed, f.policy.as_deref().unwrap_or("")).unwrap();
    }
    s
}

/// `grid.csv`, `grid_agg.csv` and, when cells failed, `failed.csv`.
pub fn write_grid(results: &[RunResult], failed: &[FailedCell], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("grid.csv"), grid_csv(results))?;
    std::fs::write(dir.join("grid_agg.csv"), grid_agg_csv(&aggregate(results)))?;
    write_failed(failed, dir)
}

/// `ablation.csv`, `ablation_agg.csv` and, when cells failed, `failed.csv`.
pub fn write_ablation(results: &[RunResult], failed: &[FailedCell], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("ablation.csv"), ablation_csv(results))?;
    std::fs::write(dir.join("ablation_agg.csv"), ablation_agg_csv(&aggregate(results)))?;
    write_failed(failed, dir)
}

fn write_failed(failed: &[FailedCell], dir: &Path) -> Result<()> {
    let path = dir.join("failed.csv");
    if failed.is_empty() {
        if path.exists() {
            std::fs::remove_file(path)?;
        }
    } else {
        std::fs::write(path, failed_csv(failed))?;
    }
    Ok(())
}
