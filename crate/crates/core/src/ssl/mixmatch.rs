use rand::seq::SliceRandom;

use super::{guess_labels, guess_params, labeled_ce, sharpen, stack_images, targets_tensor, LabeledBatch, LossTerms, SslConfig};
use crate::augment::{apply_weak, mix_pair, sample_mix_weight, WeakParams};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{Classifier, Mode};
use crate::prob::ProbDist;
use crate::rng::{Purpose, RngStream};
use crate::tensor::{Graph, Real, Tensor};

/// Mixed labeled batch `X'` (size B) and mixed unlabeled batch `U'` (size K * |U|).
#[derive(Clone, Debug, PartialEq)]
pub struct MixMatchBatch<T = f32> {
    pub x: LabeledBatch<T>,
    pub u: LabeledBatch<T>,
    /// Sharpened guess per unlabeled example, before mixing.
    pub guesses: Vec<ProbDist>,
}

impl MixMatchBatch<f32> {
    pub fn cast<U: Real>(&self) -> MixMatchBatch<U> {
        let cast = |b: &LabeledBatch<f32>| LabeledBatch { images: b.images.cast(), labels: b.labels.clone() };
        MixMatchBatch { x: cast(&self.x), u: cast(&self.u), guesses: self.guesses.clone() }
    }
}

pub fn mixmatch_prepare<M: Classifier<f32>>(
    model: &M,
    x: &[Example],
    u: &[Example],
    cfg: &SslConfig,
    stream: &RngStream,
    step: u64,
) -> Result<MixMatchBatch> {
    let mut draw = |i: usize| sample_mix_weight(cfg.alpha, &mut stream.derive(Purpose::Mixup, i as u64, step));
    mixmatch_prepare_with_weights(model, x, u, cfg, stream, step, &mut draw)
}

/// [`mixmatch_prepare`] with the raw MixUp weight of pool slot `i` supplied by `weight(i)`.
pub fn mixmatch_prepare_with_weights<M: Classifier<f32>>(
    model: &M,
    x: &[Example],
    u: &[Example],
    cfg: &SslConfig,
    stream: &RngStream,
    step: u64,
    weight: &mut dyn FnMut(usize) -> Result<f64>,
) -> Result<MixMatchBatch> {
    cfg.validate()?;
    let mut images: Vec<Vec<f32>> = Vec::with_capacity(x.len() + cfg.k * u.len());
    let mut labels: Vec<ProbDist> = Vec::with_capacity(images.capacity());
    for (i, ex) in x.iter().enumerate() {
        let label = ex.label.ok_or_else(|| Error::Config("labeled batch contains an unlabeled example".into()))?;
        let p = WeakParams::sample(&mut stream.derive(Purpose::WeakLabeled, i as u64, step));
        images.push(apply_weak(&ex.image, &p));
        labels.push(ProbDist::one_hot(label as usize, 2));
    }

    let views: Vec<Vec<Vec<f32>>> = u
        .iter()
        .enumerate()
        .map(|(j, ex)| (0..cfg.k).map(|k| apply_weak(&ex.image, &guess_params(stream, j, k, step))).collect())
        .collect();
    let guesses = guess_labels(model, &views)?.iter().map(|q| sharpen(q, cfg.t)).collect::<Result<Vec<_>>>()?;
    for (v, q) in views.into_iter().zip(&guesses) {
        for view in v {
            images.push(view);
            labels.push(q.clone());
        }
    }

    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut stream.derive(Purpose::MixupShuffle, 0, step));
    let mut mixed_images = Vec::with_capacity(images.len());
    let mut mixed_labels = Vec::with_capacity(images.len());
    for i in 0..images.len() {
        let j = order[i];
        let (im, lab) = mix_pair((&images[i], &labels[i]), (&images[j], &labels[j]), weight(i)?);
        mixed_images.push(im);
        mixed_labels.push(lab);
    }
    let u_labels = mixed_labels.split_off(x.len());
    let u_images = mixed_images.split_off(x.len());
    let u_batch = if u_images.is_empty() {
        LabeledBatch { images: Tensor::zeros(&[0]), labels: Vec::new() }
    } else {
        LabeledBatch { images: stack_images(&u_images)?, labels: u_labels }
    };
    Ok(MixMatchBatch { x: LabeledBatch { images: stack_images(&mixed_images)?, labels: mixed_labels }, u: u_batch, guesses })
}

/// `Ls = (1/B) sum H(p, softmax(z))` on `X'`, `Lu = (1/|U'|) sum ||q - softmax(z)||^2`
/// on `U'`, `total = Ls + lambda_u * Lu`. Both batches share one train-mode pass.
pub fn mixmatch_loss<T: Real, M: Classifier<T>>(
    model: &M,
    g: &mut Graph<T>,
    batch: &MixMatchBatch<T>,
    lambda_u: f64,
) -> Result<LossTerms<T>> {
    let b = batch.x.len();
    if b == 0 {
        return Err(Error::Config("mixmatch loss needs a nonempty labeled batch".into()));
    }
    let nu = batch.u.len();
    let images = if nu == 0 { batch.x.images.clone() } else { Tensor::concat_rows(&[&batch.x.images, &batch.u.images])? };
    let input = g.input(images);
    let pass = model.forward(g, input, Mode::Train)?;
    let x_logits = g.slice_rows(pass.logits, 0, b)?;
    let ls_var = labeled_ce(g, x_logits, &batch.x.labels)?;
    let ls = g.value(ls_var).data()[0].as_f64();
    if nu == 0 {
        return Ok(LossTerms { total: ls_var, ls, lu: 0.0, mask_rate: 0.0, pass });
    }
    let u_logits = g.slice_rows(pass.logits, b, b + nu)?;
    let probs = g.softmax(u_logits)?;
    let sq = g.squared_distance(probs, &targets_tensor(&batch.u.labels))?;
    let lu_var = g.scale(sq, T::from_f64(1.0 / nu as f64));
    let lu = g.value(lu_var).data()[0].as_f64();
    let weighted = g.scale(lu_var, T::from_f64(lambda_u));
    let total = g.add(ls_var, weighted)?;
    Ok(LossTerms { total, ls, lu, mask_rate: 0.0, pass })
}
