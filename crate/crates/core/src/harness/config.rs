// Run, grid and ablation configuration files.
//
// All files are TOML. Unknown keys are rejected so typos surface as config
// errors instead of silently falling back to defaults. Relative paths are
// resolved against the working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::augment::CANONICAL_POLICIES;
use crate::data::{load, synth_generate, Example, LabelBudget, SplitSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::trainer::{Method, TrainConfig};

pub fn parse_toml<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{what}: {e}")))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_toml(&text, &path.display().to_string())
}

/// Where examples come from: a dataset file or the synthetic generator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Label used in the `dataset` CSV column.
    pub name: Option<String>,
    pub path: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
}

impl DataConfig {
    pub fn name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.path {
            Some(p) => p.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned()),
            None => "synthetic".into(),
        }
    }

    pub fn load(&self) -> Result<Vec<Example>> {
        match (&self.path, &self.synth) {
            (Some(_), Some(_)) => Err(Error::Config("data: set either `path` or `[data.synth]`, not both".into())),
            (Some(p), None) => load(p),
            (None, s) => Ok(synth_generate(&s.clone().unwrap_or_default())),
        }
    }
}

/// How many examples keep their labels: a count, or `"all"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelCount {
    Count(usize),
    Keyword(AllKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllKeyword {
    All,
}

impl Default for LabelCount {
    fn default() -> Self {
        LabelCount::Count(100)
    }
}

impl LabelCount {
    pub fn budget(self) -> LabelBudget {
        match self {
            LabelCount::Count(n) => LabelBudget::Balanced(n),
            LabelCount::Keyword(AllKeyword::All) => LabelBudget::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub n_labeled: LabelCount,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub unlabeled_limit: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n_labeled: LabelCount::default(), split_seed: 0, test_fraction: 0.10, unlabeled_limit: None }
    }
}

impl SplitConfig {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec {
            budget: self.n_labeled.budget(),
            split_seed: self.split_seed,
            test_fraction: self.test_fraction,
            unlabeled_limit: self.unlabeled_limit,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Metrics log (`step,Ls,Lu,mask_rate,lr` per line).
    pub metrics: Option<PathBuf>,
    /// Checkpoint of the EMA weights.
    pub checkpoint: Option<PathBuf>,
}

/// Configuration of a single `train` run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

/// Wrapper for `synth --config`: a file with a single `[synth]` table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthFile {
    pub synth: SynthConfig,
}

/// Per-method overrides layered on the base train config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodOverride {
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub ema_decay: Option<f64>,
    pub total_steps: Option<usize>,
    pub batch_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub methods: Vec<Method>,
    pub label_counts: Vec<usize>,
    pub n_seeds: usize,
    /// First seed; cell seeds are `first_seed .. first_seed + n_seeds`.
    pub first_seed: u64,
    pub test_fraction: f64,
    /// Run the full-pool supervised job.
    pub upper_bound: bool,
    /// Seeds for the full-pool job (the first `upper_bound_seeds` cell seeds).
    pub upper_bound_seeds: usize,
    /// Fill `wall_time_s`; off by default so reruns are byte-identical.
    pub record_wall_time: bool,
    /// Worker threads for independent cells (1 = sequential).
    pub jobs: usize,
    /// Ablation: canonical policy names to run.
    pub policies: Vec<String>,
    /// Ablation: labeled examples per run.
    pub ablation_labeled: usize,
    /// Ablation: truncate the unlabeled pool to this size; `None` keeps the remainder.
    pub ablation_unlabeled: Option<usize>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub method_overrides: BTreeMap<Method, MethodOverride>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            label_counts: vec![10, 50, 100, 500],
            n_seeds: 5,
            first_seed: 0,
            test_fraction: 0.10,
            upper_bound: true,
            upper_bound_seeds: 1,
            record_wall_time: false,
            jobs: 1,
            policies: CANONICAL_POLICIES.iter().map(|s| s.to_string()).collect(),
            ablation_labeled: 50,
            ablation_unlabeled: Some(50),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            method_overrides: BTreeMap::new(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds < 1 {
            return Err(Error::Config("grid: n_seeds must be at least 1".into()));
        }
        if self.label_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("grid: label_counts must be strictly ascending".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("grid: methods must not be empty".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("grid: jobs must be at least 1".into()));
        }
        if self.upper_bound && !(1..=self.n_seeds).contains(&self.upper_bound_seeds) {
            return Err(Error::Config("grid: upper_bound_seeds must be in 1..=n_seeds".into()));
        }
        for p in &self.policies {
            if !CANONICAL_POLICIES.contains(&p.as_str()) {
                return Err(Error::Config(format!("grid: unknown policy {p:?}")));
            }
        }
        for m in &self.methods {
            self.train_config(*m, self.first_seed).validate()?;
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        self.first_seed..self.first_seed + self.n_seeds as u64
    }

    /// Base config with method overrides applied and every seed set to `seed`.
    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.method = method;
        cfg.seed = seed;
        cfg.model.seed = seed;
        if let Some(o) = self.method_overrides.get(&method) {
            cfg.lr = o.lr.or(cfg.lr);
            cfg.weight_decay = o.weight_decay.or(cfg.weight_decay);
            cfg.ema_decay = o.ema_decay.unwrap_or(cfg.ema_decay);
            cfg.total_steps = o.total_steps.unwrap_or(cfg.total_steps);
            cfg.batch_size = o.batch_size.unwrap_or(cfg.batch_size);
        }
        cfg
    }
}
