use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Example;
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};

/// How many training examples keep their labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelBudget {
    /// `n` examples total, `n / 2` drawn from each class.
    Balanced(usize),
    /// The whole training pool is labeled (supervised upper bound).
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub budget: LabelBudget,
    pub split_seed: u64,
    pub test_fraction: f64,
    /// Truncate the unlabeled pool to this many examples.
    pub unlabeled_limit: Option<usize>,
}

impl SplitSpec {
    pub fn balanced(n_labeled: usize, split_seed: u64) -> Self {
        Self { budget: LabelBudget::Balanced(n_labeled), split_seed, test_fraction: 0.10, unlabeled_limit: None }
    }

    pub fn full_pool(split_seed: u64) -> Self {
        Self { budget: LabelBudget::All, ..Self::balanced(0, split_seed) }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitDataset {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub test: Vec<Example>,
}

impl SplitDataset {
    pub fn without_unlabeled(&self) -> Self {
        Self { labeled: self.labeled.clone(), unlabeled: Vec::new(), test: self.test.clone() }
    }

    pub fn labeled_histogram(&self) -> [usize; 2] {
        let mut h = [0; 2];
        for ex in &self.labeled {
            if let Some(l) = ex.label {
                h[l as usize] += 1;
            }
        }
        h
    }
}

/// Shuffles by `split_seed`, holds out the last `test_fraction` (rounded down)
/// as test, then draws the labeled subset from the remaining training pool.
pub fn split(examples: &[Example], spec: &SplitSpec) -> Result<SplitDataset> {
    if !(0.0..1.0).contains(&spec.test_fraction) {
        return Err(Error::Split(format!("test_fraction {} must be in [0, 1)", spec.test_fraction)));
    }
    let stream = RngStream::new(spec.split_seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut stream.derive(Purpose::Split, 0, 0));
    let n_test = (examples.len() as f64 * spec.test_fraction).floor() as usize;
    let (pool, test_idx) = order.split_at(examples.len() - n_test);

    let mut test = Vec::with_capacity(n_test);
    for &i in test_idx {
        if examples[i].label.is_none() {
            return Err(Error::Split(format!("example {i} assigned to test has no label")));
        }
        test.push(examples[i].clone());
    }

    let mut labeled_mask = vec![false; pool.len()];
    match spec.budget {
        LabelBudget::All => {
            for (slot, &i) in pool.iter().enumerate() {
                if examples[i].label.is_none() {
                    return Err(Error::Split(format!("example {i} in the full labeled pool has no label")));
                }
                labeled_mask[slot] = true;
            }
        }
        LabelBudget::Balanced(n) => {
            if n % 2 != 0 {
                return Err(Error::Split(format!("n_labeled {n} must be even (equal per-class draw)")));
            }
            let per_class = n / 2;
            for class in [0u8, 1] {
                let mut members: Vec<usize> = (0..pool.len()).filter(|&s| examples[pool[s]].label == Some(class)).collect();
                if members.len() < per_class {
                    return Err(Error::Split(format!(
                        "class {class} has {} training examples, {per_class} requested",
                        members.len()
                    )));
                }
                members.shuffle(&mut stream.derive(Purpose::SplitClass(class), 0, 0));
                for &s in &members[..per_class] {
                    labeled_mask[s] = true;
                }
            }
        }
    }

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (slot, &i) in pool.iter().enumerate() {
        if labeled_mask[slot] {
            labeled.push(examples[i].clone());
        } else if spec.unlabeled_limit.is_none_or(|k| unlabeled.len() < k) {
            unlabeled.push(examples[i].unlabeled());
        }
    }
    Ok(SplitDataset { labeled, unlabeled, test })
}
