//! Experiment orchestration: the label-count grid, the augmentation ablation
//! and CSV reporting.
//!
//! Every cell derives all of its randomness from its own seed, so cells can run
//! in any order or in parallel and still produce identical rows.

pub mod config;
mod report;

pub use config::{DataConfig, GridSpec, LabelCount, MethodOverride, OutputConfig, RunConfig, SplitConfig, SynthFile};
pub use report::{
    ablation_csv, ablation_agg_csv, aggregate, failed_csv, format_accuracy, grid_agg_csv, grid_csv, mean_std, write_ablation,
    write_grid, AggregateRow,
};

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::augment::AugPolicy;
use crate::data::{split, Example, SplitSpec};
use crate::error::Result;
use crate::trainer::{metrics_log, train, Method, StepMetrics, TrainConfig};

/// Method label of the full-pool supervised row.
pub const UPPER_BOUND: &str = "supervised_full";

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub dataset: String,
    /// `supervised`, `mixmatch`, `fixmatch` or [`UPPER_BOUND`].
    pub method: String,
    pub n_labeled: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub wall_time_s: Option<f64>,
    pub final_ls: f64,
    pub final_lu: f64,
    /// Canonical policy name and fingerprint (ablation rows).
    pub policy: Option<(String, String)>,
    pub metrics: Vec<StepMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FailedCell {
    pub method: String,
    pub n_labeled: usize,
    pub seed: u64,
    pub policy: Option<String>,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct GridOutcome {
    pub results: Vec<RunResult>,
    pub failed: Vec<FailedCell>,
}

impl GridOutcome {
    pub fn success(&self) -> bool {
        self.failed.is_empty()
    }
}

/// One unit of work.
#[derive(Clone, Debug)]
struct Cell {
    label: String,
    split: SplitSpec,
    train: TrainConfig,
    seed: u64,
    policy: Option<String>,
}

fn run_cell(dataset: &str, examples: &[Example], cell: &Cell, wall_time: bool) -> Result<RunResult> {
    let data = split(examples, &cell.split)?;
    let start = Instant::now();
    let out = train(&cell.train, &data)?;
    let elapsed = start.elapsed().as_secs_f64();
    let last = out.metrics.last().copied();
    Ok(RunResult {
        dataset: dataset.to_string(),
        method: cell.label.clone(),
        n_labeled: data.labeled.len(),
        seed: cell.seed,
        accuracy: out.test_accuracy,
        wall_time_s: wall_time.then_some(elapsed),
        final_ls: last.map_or(f64::NAN, |m| m.ls),
        final_lu: last.map_or(f64::NAN, |m| m.lu),
        policy: cell.policy.clone().map(|p| (p, cell.train.aug_policy.fingerprint())),
        metrics: out.metrics,
    })
}

fn run_cells(spec: &GridSpec, dataset: &str, examples: &[Example], cells: &[Cell]) -> GridOutcome {
    let work = |cell: &Cell| {
        run_cell(dataset, examples, cell, spec.record_wall_time).map_err(|e| FailedCell {
            method: cell.label.clone(),
            n_labeled: match cell.split.budget {
                crate::data::LabelBudget::Balanced(n) => n,
                crate::data::LabelBudget::All => 0,
            },
            seed: cell.seed,
            policy: cell.policy.clone(),
            error: e.to_string(),
        })
    };
    let outcomes: Vec<std::result::Result<RunResult, FailedCell>> = if spec.jobs > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(spec.jobs).build() {
            Ok(pool) => pool.install(|| cells.par_iter().map(work).collect()),
            Err(_) => cells.iter().map(work).collect(),
        }
    } else {
        cells.iter().map(work).collect()
    };
    let mut out = GridOutcome::default();
    for o in outcomes {
        match o {
            Ok(r) => out.results.push(r),
            Err(f) => out.failed.push(f),
        }
    }
    out
}

/// Every `(method, n_labeled, seed)` cell with `split_seed = seed`, plus the
/// full-pool supervised upper bound.
pub fn run_grid(spec: &GridSpec) -> Result<GridOutcome> {
    spec.validate()?;
    let examples = spec.data.load()?;
    run_grid_on(spec, &examples)
}

pub fn run_grid_on(spec: &GridSpec, examples: &[Example]) -> Result<GridOutcome> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &method in &spec.methods {
        for &n in &spec.label_counts {
            for seed in spec.seeds() {
                cells.push(Cell {
                    label: method.name().into(),
                    split: SplitSpec { test_fraction: spec.test_fraction, ..SplitSpec::balanced(n, seed) },
                    train: spec.train_config(method, seed),
                    seed,
                    policy: None,
                });
            }
        }
    }
    if spec.upper_bound {
        for seed in spec.seeds().take(spec.upper_bound_seeds) {
            cells.push(Cell {
                label: UPPER_BOUND.into(),
                split: SplitSpec { test_fraction: spec.test_fraction, ..SplitSpec::full_pool(seed) },
                train: spec.train_config(Method::Supervised, seed),
                seed,
                policy: None,
            });
        }
    }
    Ok(run_cells(spec, &spec.data.name(), examples, &cells))
}

/// FixMatch under each canonical augmentation policy with `ablation_labeled`
/// labels and (by default) `ablation_unlabeled` unlabeled examples.
pub fn run_ablation(spec: &GridSpec) -> Result<GridOutcome> {
    spec.validate()?;
    let examples = spec.data.load()?;
    run_ablation_on(spec, &examples)
}

pub fn run_ablation_on(spec: &GridSpec, examples: &[Example]) -> Result<GridOutcome> {
    spec.validate()?;
    let mut cells = Vec::new();
    for name in &spec.policies {
        let policy = AugPolicy::from_name(name)?;
        for seed in spec.seeds() {
            let mut train = spec.train_config(Method::FixMatch, seed);
            train.aug_policy = AugPolicy { ops_per_image: train.aug_policy.ops_per_image, cutout_fraction: train.aug_policy.cutout_fraction, ..policy.clone() };
            let split = SplitSpec {
                test_fraction: spec.test_fraction,
                unlabeled_limit: spec.ablation_unlabeled,
                ..SplitSpec::balanced(spec.ablation_labeled, seed)
            };
            cells.push(Cell { label: Method::FixMatch.name().into(), split, train, seed, policy: Some(name.clone()) });
        }
    }
    Ok(run_cells(spec, &spec.data.name(), examples, &cells))
}

/// Writes one metrics log per result into `dir/metrics/`.
pub fn write_metrics_logs(results: &[RunResult], dir: &Path) -> Result<()> {
    let sub = dir.join("metrics");
    std::fs::create_dir_all(&sub)?;
    for r in results {
        let name = match &r.policy {
            Some((p, _)) => format!("{}_{}_{}_seed{}.csv", r.method, p, r.n_labeled, r.seed),
            None => format!("{}_{}_seed{}.csv", r.method, r.n_labeled, r.seed),
        };
        std::fs::write(sub.join(name), metrics_log(&r.metrics))?;
    }
    Ok(())
}
