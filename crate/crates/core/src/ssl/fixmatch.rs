use super::{labeled_ce, stack_images, targets_tensor, LabeledBatch, LossTerms, SslConfig};
use crate::augment::{apply_weak, AugPolicy, StrongParams, WeakParams};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{probabilities, Classifier, Mode};
use crate::prob::ProbDist;
use crate::rng::{Purpose, RngStream};
use crate::tensor::{Graph, Real, Tensor};

/// Weakly augmented labeled batch plus one weak and one strong view of every
/// unlabeled example.
#[derive(Clone, Debug, PartialEq)]
pub struct FixMatchBatch<T = f32> {
    pub x: LabeledBatch<T>,
    /// `[mu * B, 6, H, W]`; its predictions become the pseudo-labels.
    pub weak: Tensor<T>,
    /// `[mu * B, 6, H, W]`
    pub strong: Tensor<T>,
}

impl FixMatchBatch<f32> {
    pub fn cast<U: Real>(&self) -> FixMatchBatch<U> {
        FixMatchBatch {
            x: LabeledBatch { images: self.x.images.cast(), labels: self.x.labels.clone() },
            weak: self.weak.cast(),
            strong: self.strong.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabel {
    pub class: usize,
    pub confidence: f64,
    pub retained: bool,
}

/// Hard pseudo-labels; an item is retained when `max(q) >= tau`.
pub fn pseudo_labels(predictions: &[ProbDist], tau: f64) -> Vec<PseudoLabel> {
    predictions
        .iter()
        .map(|q| PseudoLabel { class: q.argmax(), confidence: q.max(), retained: q.max() >= tau })
        .collect()
}

/// One weak view of every labeled example and one weak plus one strong view
/// (under `policy`) of every unlabeled example.
pub fn fixmatch_prepare(
    x: &[Example],
    u: &[Example],
    policy: &AugPolicy,
    stream: &RngStream,
    step: u64,
) -> Result<FixMatchBatch> {
    let mut images = Vec::with_capacity(x.len());
    let mut labels = Vec::with_capacity(x.len());
    for (i, ex) in x.iter().enumerate() {
        let label = ex.label.ok_or_else(|| Error::Config("labeled batch contains an unlabeled example".into()))?;
        let p = WeakParams::sample(&mut stream.derive(Purpose::WeakLabeled, i as u64, step));
        images.push(apply_weak(&ex.image, &p));
        labels.push(ProbDist::one_hot(label as usize, 2));
    }
    if u.is_empty() {
        return Err(Error::Config("fixmatch needs a nonempty unlabeled batch".into()));
    }
    let weak: Vec<Vec<f32>> = u
        .iter()
        .enumerate()
        .map(|(j, ex)| apply_weak(&ex.image, &WeakParams::sample(&mut stream.derive(Purpose::WeakUnlabeled, j as u64, step))))
        .collect();
    let strong: Vec<Vec<f32>> = u
        .iter()
        .enumerate()
        .map(|(j, ex)| Ok(StrongParams::sample(policy, &mut stream.derive(Purpose::Strong, j as u64, step))?.apply(&ex.image)))
        .collect::<Result<_>>()?;
    Ok(FixMatchBatch {
        x: LabeledBatch { images: stack_images(&images)?, labels },
        weak: stack_images(&weak)?,
        strong: stack_images(&strong)?,
    })
}

/// `Ls = (1/B) sum H(p, softmax(z))` on the weak labeled views and
/// `Lu = (1/(mu B)) sum 1(max q >= tau) H(onehot(argmax q), softmax(z_strong))`;
/// `total = Ls + lambda_u * Lu`.
///
/// Labeled, weak and strong views share one train-mode pass. The pseudo-labels
/// `q` are read off the weak rows as constants, so no gradient flows through them.
pub fn fixmatch_objective<T: Real, M: Classifier<T>>(
    model: &M,
    g: &mut Graph<T>,
    batch: &FixMatchBatch<T>,
    tau: f64,
    lambda_u: f64,
) -> Result<LossTerms<T>> {
    let b = batch.x.len();
    let nu = batch.weak.shape()[0];
    if b == 0 || nu == 0 || batch.strong.shape()[0] != nu {
        return Err(Error::Config(format!("fixmatch batch: {b} labeled, {nu} weak, {:?} strong", batch.strong.shape())));
    }
    let images = Tensor::concat_rows(&[&batch.x.images, &batch.weak, &batch.strong])?;
    let input = g.input(images);
    let pass = model.forward(g, input, Mode::Train)?;
    let x_logits = g.slice_rows(pass.logits, 0, b)?;
    let ls_var = labeled_ce(g, x_logits, &batch.x.labels)?;
    let ls = g.value(ls_var).data()[0].as_f64();

    let weak_logits = g.value(pass.logits).slice_rows(b, b + nu)?;
    let pl = pseudo_labels(&probabilities(&weak_logits)?, tau);
    let targets: Vec<ProbDist> = pl.iter().map(|p| ProbDist::one_hot(p.class, 2)).collect();
    let inv = 1.0 / nu as f64;
    let weights: Vec<T> = pl.iter().map(|p| T::from_f64(if p.retained { inv } else { 0.0 })).collect();
    let u_logits = g.slice_rows(pass.logits, b + nu, b + 2 * nu)?;
    let lu_var = g.weighted_cross_entropy(u_logits, &targets_tensor(&targets), &weights)?;
    let lu = g.value(lu_var).data()[0].as_f64();
    let weighted = g.scale(lu_var, T::from_f64(lambda_u));
    let total = g.add(ls_var, weighted)?;
    let mask_rate = pl.iter().filter(|p| p.retained).count() as f64 / nu as f64;
    Ok(LossTerms { total, ls, lu, mask_rate, pass })
}

/// [`fixmatch_prepare`] followed by [`fixmatch_objective`].
#[allow(clippy::too_many_arguments)]
pub fn fixmatch_loss<M: Classifier<f32>>(
    model: &M,
    g: &mut Graph<f32>,
    x: &[Example],
    u: &[Example],
    policy: &AugPolicy,
    cfg: &SslConfig,
    stream: &RngStream,
    step: u64,
) -> Result<LossTerms<f32>> {
    let batch = fixmatch_prepare(x, u, policy, stream, step)?;
    fixmatch_objective(model, g, &batch, cfg.tau, cfg.lambda_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::TensorError;
    use crate::model::ForwardPass;
    use crate::ssl::ConstantClassifier;
    use crate::tensor::Var;

    /// Logits are the first two pixels of each image.
    struct FirstPixels;

    impl Classifier<f64> for FirstPixels {
        fn forward(&self, g: &mut Graph<f64>, input: Var, _mode: Mode) -> std::result::Result<ForwardPass<f64>, TensorError> {
            let x = g.value(input);
            let n = x.shape()[0];
            let per = x.len() / n;
            let logits = Tensor::from_fn(&[n, 2], |i| x.data()[(i / 2) * per + i % 2]);
            Ok(ForwardPass { logits: g.input(logits), params: Vec::new(), batch_stats: Vec::new() })
        }
    }

    fn batch(nu: usize) -> FixMatchBatch<f64> {
        FixMatchBatch {
            x: LabeledBatch { images: Tensor::zeros(&[1, 6, 2, 2]), labels: vec![ProbDist::one_hot(0, 2)] },
            weak: Tensor::zeros(&[nu, 6, 2, 2]),
            strong: Tensor::zeros(&[nu, 6, 2, 2]),
        }
    }

    #[test]
    fn uniform_guesses_are_all_masked() {
        let model = ConstantClassifier::new(&ProbDist::uniform(2));
        let mut g = Graph::new();
        let t = fixmatch_objective(&model, &mut g, &batch(3), 0.95, 1.0).unwrap();
        assert_eq!(t.lu, 0.0);
        assert_eq!(t.mask_rate, 0.0);
    }

    #[test]
    fn confident_guess_is_retained_as_class_zero() {
        let pl = pseudo_labels(&[ProbDist::new(vec![0.97, 0.03]).unwrap()], 0.95);
        assert_eq!(pl[0], PseudoLabel { class: 0, confidence: 0.97, retained: true });
    }

    #[test]
    fn one_retained_of_three() {
        let mut b = batch(3);
        b.weak.data_mut()[24] = 0.97f64.ln();
        b.weak.data_mut()[25] = 0.03f64.ln();
        let mut g = Graph::new();
        let t = fixmatch_objective(&FirstPixels, &mut g, &b, 0.95, 1.0).unwrap();
        assert!((t.lu - std::f64::consts::LN_2 / 3.0).abs() < 1e-12);
        assert!((t.mask_rate - 1.0 / 3.0).abs() < 1e-12);
        assert!((t.ls - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn prepare_shapes_and_determinism() {
        let x = vec![Example::new(vec![0.2; crate::data::PIXELS], Some(1))];
        let u: Vec<Example> = (0..3).map(|i| Example::new(vec![0.1 * i as f32; crate::data::PIXELS], None)).collect();
        let stream = RngStream::new(9);
        let a = fixmatch_prepare(&x, &u, &AugPolicy::default(), &stream, 4).unwrap();
        assert_eq!(a.weak.shape(), &[3, 6, 64, 64]);
        assert_eq!(a.strong.shape(), &[3, 6, 64, 64]);
        assert_eq!(a, fixmatch_prepare(&x, &u, &AugPolicy::default(), &stream, 4).unwrap());
        assert!(fixmatch_prepare(&x, &[], &AugPolicy::default(), &stream, 4).is_err());
    }
}
