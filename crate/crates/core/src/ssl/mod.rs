//! Pseudo-labelling and the supervised, MixMatch and FixMatch objectives.
//!
//! Every method is split into a `prepare` step that augments and assembles
//! batches (all randomness lives here) and a loss step that records the
//! objective on a [`Graph`]. Loss steps are generic over the float type so
//! they can be checked in `f64` against scalar arithmetic.

mod fixmatch;
mod mixmatch;

pub use fixmatch::{fixmatch_loss, fixmatch_objective, fixmatch_prepare, pseudo_labels, FixMatchBatch, PseudoLabel};
pub use mixmatch::{mixmatch_loss, mixmatch_prepare, mixmatch_prepare_with_weights, MixMatchBatch};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_weak, mix_pair, sample_mix_weight, WeakParams};
use crate::data::{Example, CHANNELS, SIDE};
use crate::error::{Error, Result, TensorError};
use crate::model::{Classifier, ForwardPass, Mode};
use crate::prob::ProbDist;
use crate::rng::{Purpose, RngStream};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    /// Weak augmentations per unlabeled example when guessing labels (MixMatch).
    pub k: usize,
    /// Sharpening temperature.
    pub t: f64,
    /// MixUp Beta parameter.
    pub alpha: f64,
    /// FixMatch confidence threshold.
    pub tau: f64,
    pub lambda_u: f64,
    /// Unlabeled-to-labeled batch ratio.
    pub mu: usize,
    /// Fraction of training over which MixMatch ramps `lambda_u` up from 0.
    pub rampup_fraction: f64,
    /// Apply MixUp inside the labeled batch for the supervised baseline.
    pub supervised_mixup: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self { k: 2, t: 0.5, alpha: 0.5, tau: 0.95, lambda_u: 1.0, mu: 3, rampup_fraction: 0.25, supervised_mixup: true }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ssl: {m}")));
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if !(self.t > 0.0) {
            return bad("t must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if !(self.lambda_u >= 0.0) {
            return bad("lambda_u must be non-negative");
        }
        if self.mu < 1 {
            return bad("mu must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.rampup_fraction) {
            return bad("rampup_fraction must be in [0, 1]");
        }
        Ok(())
    }
}

/// Images with one target distribution per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch<T = f32> {
    pub images: Tensor<T>,
    pub labels: Vec<ProbDist>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledBatch<T = f32> {
    pub images: Tensor<T>,
}

impl<T: Real> LabeledBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn targets(&self) -> Tensor<T> {
        targets_tensor(&self.labels)
    }
}

impl<T: Real> UnlabeledBatch<T> {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `[N, 6, 64, 64]` tensor from flat example images.
pub fn stack_images<I: AsRef<[f32]>>(images: &[I]) -> Result<Tensor<f32>, TensorError> {
    let data: Vec<f32> = images.iter().flat_map(|im| im.as_ref().iter().copied()).collect();
    Tensor::new(&[images.len(), CHANNELS, SIDE, SIDE], data)
}

pub fn targets_tensor<T: Real>(labels: &[ProbDist]) -> Tensor<T> {
    let c = labels.first().map_or(2, ProbDist::num_classes);
    let data = labels.iter().flat_map(|p| p.as_slice().iter().map(|&v| T::from_f64(v))).collect();
    Tensor::new(&[labels.len(), c], data).expect("consistent label widths")
}

/// Builds a labeled batch from examples that all carry labels.
pub fn labeled_batch(examples: &[Example]) -> Result<LabeledBatch> {
    let labels = examples
        .iter()
        .map(|e| e.label.map(|l| ProbDist::one_hot(l as usize, 2)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config("labeled batch contains an unlabeled example".into()))?;
    let images: Vec<&[f32]> = examples.iter().map(|e| &e.image[..]).collect();
    Ok(LabeledBatch { images: stack_images(&images)?, labels })
}

pub fn unlabeled_batch(examples: &[Example]) -> Result<UnlabeledBatch> {
    let images: Vec<&[f32]> = examples.iter().map(|e| &e.image[..]).collect();
    Ok(UnlabeledBatch { images: stack_images(&images)? })
}

/// `p_i^(1/T) / sum_j p_j^(1/T)`.
pub fn sharpen(p: &ProbDist, t: f64) -> Result<ProbDist> {
    if !(t > 0.0) {
        return Err(TensorError::Argument(format!("sharpen temperature must be positive, got {t}")).into());
    }
    // Work relative to the max so tiny temperatures do not underflow to 0/0.
    let m = p.max();
    let powered: Vec<f64> = p.as_slice().iter().map(|&v| (v / m).powf(1.0 / t)).collect();
    let s: f64 = powered.iter().sum();
    Ok(ProbDist::from_raw(powered.into_iter().map(|v| v / s).collect()))
}

/// Arithmetic mean of distributions over the same classes.
pub fn average(dists: &[ProbDist]) -> ProbDist {
    let c = dists[0].num_classes();
    let mut acc = vec![0.0; c];
    for d in dists {
        for (a, &v) in acc.iter_mut().zip(d.as_slice()) {
            *a += v;
        }
    }
    let n = dists.len() as f64;
    ProbDist::from_raw(acc.into_iter().map(|v| v / n).collect())
}

/// Weak augmentation parameters of the `k`-th guess for unlabeled example `index`.
pub fn guess_params(stream: &RngStream, index: usize, k: usize, step: u64) -> WeakParams {
    WeakParams::sample(&mut stream.derive(Purpose::GuessAugment(k as u32), index as u64, step))
}

/// Average eval-mode prediction over `k` weak augmentations of `u`.
pub fn guess_label<M: Classifier<f32>>(model: &M, u: &Example, k: usize, stream: &RngStream, index: usize, step: u64) -> Result<ProbDist> {
    let views: Vec<Vec<f32>> = (0..k).map(|j| apply_weak(&u.image, &guess_params(stream, index, j, step))).collect();
    let preds = model.predict(&stack_images(&views)?, Mode::Eval)?;
    Ok(average(&preds))
}

/// Batched [`guess_label`]; `views[j][k]` must be the `k`-th view of example `j`.
pub fn guess_labels<M: Classifier<f32>>(model: &M, views: &[Vec<Vec<f32>>]) -> Result<Vec<ProbDist>> {
    let k = views.first().map_or(0, Vec::len);
    let flat: Vec<&[f32]> = views.iter().flat_map(|v| v.iter().map(Vec::as_slice)).collect();
    if flat.is_empty() {
        return Ok(Vec::new());
    }
    let preds = model.predict(&stack_images(&flat)?, Mode::Eval)?;
    Ok(preds.chunks(k).map(average).collect())
}

/// Scalar values and graph handles of one recorded objective.
#[derive(Debug)]
pub struct LossTerms<T> {
    pub total: Var,
    pub ls: f64,
    pub lu: f64,
    pub mask_rate: f64,
    pub pass: ForwardPass<T>,
}

/// Weakly augments `x`, then (optionally) mixes it with a shuffled copy of itself.
pub fn supervised_prepare(x: &[Example], cfg: &SslConfig, stream: &RngStream, step: u64) -> Result<LabeledBatch> {
    let mut images = Vec::with_capacity(x.len());
    let mut labels = Vec::with_capacity(x.len());
    for (i, ex) in x.iter().enumerate() {
        let label = ex.label.ok_or_else(|| Error::Config("supervised batch contains an unlabeled example".into()))?;
        let p = WeakParams::sample(&mut stream.derive(Purpose::WeakLabeled, i as u64, step));
        images.push(apply_weak(&ex.image, &p));
        labels.push(ProbDist::one_hot(label as usize, 2));
    }
    if cfg.supervised_mixup {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.shuffle(&mut stream.derive(Purpose::MixupShuffle, 0, step));
        let mut mixed_images = Vec::with_capacity(x.len());
        let mut mixed_labels = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let w = sample_mix_weight(cfg.alpha, &mut stream.derive(Purpose::Mixup, i as u64, step))?;
            let j = order[i];
            let (im, lab) = mix_pair((&images[i], &labels[i]), (&images[j], &labels[j]), w);
            mixed_images.push(im);
            mixed_labels.push(lab);
        }
        images = mixed_images;
        labels = mixed_labels;
    }
    Ok(LabeledBatch { images: stack_images(&images)?, labels })
}

/// `(1/B) sum_b H(p_b, softmax(z_b))` over logit rows `start..start + B`.
pub(crate) fn labeled_ce<T: Real>(g: &mut Graph<T>, logits: Var, targets: &[ProbDist]) -> Result<Var> {
    Ok(g.softmax_cross_entropy(logits, &targets_tensor(targets))?)
}

/// Mean cross entropy on an already prepared (augmented, mixed) labeled batch.
pub fn supervised_loss<T: Real, M: Classifier<T>>(model: &M, g: &mut Graph<T>, x: &LabeledBatch<T>) -> Result<LossTerms<T>> {
    if x.is_empty() {
        return Err(Error::Config("supervised loss needs a nonempty batch".into()));
    }
    let input = g.input(x.images.clone());
    let pass = model.forward(g, input, Mode::Train)?;
    let total = labeled_ce(g, pass.logits, &x.labels)?;
    let ls = g.value(total).data()[0].as_f64();
    Ok(LossTerms { total, ls, lu: 0.0, mask_rate: 0.0, pass })
}

/// A classifier that ignores its input and emits fixed logits.
#[derive(Clone, Debug)]
pub struct ConstantClassifier {
    logits: Vec<f64>,
}

impl ConstantClassifier {
    pub fn new(probs: &ProbDist) -> Self {
        Self { logits: probs.as_slice().iter().map(|p| p.max(1e-30).ln()).collect() }
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        Self { logits }
    }
}

impl<T: Real> Classifier<T> for ConstantClassifier {
    fn forward(&self, g: &mut Graph<T>, input: Var, _mode: Mode) -> Result<ForwardPass<T>, TensorError> {
        let n = g.value(input).shape()[0];
        let c = self.logits.len();
        let logits = Tensor::from_fn(&[n, c], |i| T::from_f64(self.logits[i % c]));
        Ok(ForwardPass { logits: g.input(logits), params: Vec::new(), batch_stats: Vec::new() })
    }
}
