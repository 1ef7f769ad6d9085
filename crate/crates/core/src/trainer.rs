//! Momentum SGD with cosine decay, EMA evaluation weights and the step loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugPolicy;
use crate::data::{Example, SplitDataset};
use crate::error::{Error, Result, TensorError};
use crate::model::{Classifier, Mode, Model, ModelConfig, NamedTensor, BN_MOMENTUM};
use crate::rng::{Purpose, RngStream};
use crate::ssl::{
    fixmatch_objective, fixmatch_prepare, mixmatch_loss, mixmatch_prepare, stack_images, supervised_loss,
    supervised_prepare, LossTerms, SslConfig,
};
use crate::tensor::{Graph, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Supervised,
    MixMatch,
    FixMatch,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Supervised, Method::MixMatch, Method::FixMatch];

    pub fn name(self) -> &'static str {
        match self {
            Method::Supervised => "supervised",
            Method::MixMatch => "mixmatch",
            Method::FixMatch => "fixmatch",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            Method::FixMatch => 0.03,
            _ => 0.002,
        }
    }

    pub fn default_weight_decay(self) -> f64 {
        match self {
            Method::FixMatch => 0.0005,
            _ => 0.002,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub batch_size: usize,
    pub total_steps: usize,
    /// Defaults to the method's published rate when unset.
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub momentum: f64,
    pub ema_decay: f64,
    pub seed: u64,
    /// Evaluate the EMA weights on the test split every this many steps (0 = only at the end).
    pub eval_every: usize,
    pub eval_batch: usize,
    /// Also report the accuracy of the raw (non-EMA) weights.
    pub report_raw_accuracy: bool,
    pub ssl: SslConfig,
    pub aug_policy: AugPolicy,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::FixMatch,
            batch_size: 64,
            total_steps: 10_000,
            lr: None,
            weight_decay: None,
            momentum: 0.9,
            ema_decay: 0.999,
            seed: 0,
            eval_every: 0,
            eval_batch: 256,
            report_raw_accuracy: false,
            ssl: SslConfig::default(),
            aug_policy: AugPolicy::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or(self.method.default_lr())
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay.unwrap_or(self.method.default_weight_decay())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr() > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr()));
        }
        if !(self.weight_decay() >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must be in [0, 1), got {}", self.ema_decay));
        }
        if self.eval_batch == 0 {
            return bad("eval_batch must be positive".into());
        }
        self.ssl.validate()?;
        if self.method == Method::FixMatch {
            self.aug_policy.validate()?;
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Half-cosine decay from `base_lr` at step 0 towards 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if step >= total_steps {
        return Err(TensorError::Argument(format!("step {step} outside schedule of {total_steps} steps")).into());
    }
    Ok(base_lr * (std::f64::consts::FRAC_PI_2 * step as f64 / total_steps as f64).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptState<T = f32> {
    pub velocity: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptState<T> {
    pub fn new(params: &[NamedTensor<T>]) -> Self {
        Self { velocity: params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect(), step: 0 }
    }
}

/// `g' = g + wd * p` (only where `decay` is set), `v = momentum * v + g'`, `p -= lr * v`.
pub fn sgd_step<T: Real>(
    params: &mut [NamedTensor<T>],
    grads: &[Tensor<T>],
    opt: &mut OptState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || opt.velocity.len() != params.len() {
        return Err(TensorError::Shape(format!(
            "sgd: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            opt.velocity.len()
        ))
        .into());
    }
    let (lr, m) = (T::from_f64(lr), T::from_f64(momentum));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut opt.velocity) {
        if g.shape() != p.tensor.shape() || v.shape() != p.tensor.shape() {
            return Err(TensorError::Shape(format!("sgd: gradient {:?} for {} {:?}", g.shape(), p.name, p.tensor.shape())).into());
        }
        let wd = T::from_f64(if p.decay { weight_decay } else { 0.0 });
        for ((w, &gi), vi) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = m * *vi + gi + wd * *w;
            *w -= lr * *vi;
        }
    }
    opt.step += 1;
    Ok(())
}

/// Shadow copy of the trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState<T = f32> {
    pub shadow: Vec<NamedTensor<T>>,
}

impl<T: Real> EmaState<T> {
    pub fn new(params: &[NamedTensor<T>]) -> Self {
        Self { shadow: params.to_vec() }
    }
}

/// `shadow = decay * shadow + (1 - decay) * param` for every parameter.
pub fn ema_update<T: Real>(ema: &mut EmaState<T>, params: &[NamedTensor<T>], decay: f64) -> Result<()> {
    if ema.shadow.len() != params.len() {
        return Err(TensorError::Shape(format!("ema: {} shadows for {} params", ema.shadow.len(), params.len())).into());
    }
    let (d, rest) = (T::from_f64(decay), T::from_f64(1.0 - decay));
    for (s, p) in ema.shadow.iter_mut().zip(params) {
        if s.name != p.name || s.tensor.shape() != p.tensor.shape() {
            return Err(TensorError::Shape(format!("ema: {} does not pair with {}", s.name, p.name)).into());
        }
        for (a, &b) in s.tensor.data_mut().iter_mut().zip(p.tensor.data()) {
            *a = d * *a + rest * b;
        }
    }
    Ok(())
}

/// One metrics-log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub ls: f64,
    pub lu: f64,
    pub mask_rate: f64,
    pub lr: f64,
}

impl StepMetrics {
    pub fn line(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.ls, self.lu, self.mask_rate, self.lr)
    }
}

/// `step,Ls,Lu,mask_rate,lr` lines, LF-terminated, no header.
pub fn metrics_log(metrics: &[StepMetrics]) -> String {
    let mut s = String::new();
    for m in metrics {
        writeln!(s, "{}", m.line()).expect("write to string");
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Raw weights after the last step.
    pub model: Model<f32>,
    /// EMA weights with the raw model's running BN statistics.
    pub ema_model: Model<f32>,
    pub metrics: Vec<StepMetrics>,
    pub test_accuracy: f64,
    pub raw_test_accuracy: Option<f64>,
    /// `(step, EMA accuracy)` from periodic evaluation.
    pub eval_history: Vec<(usize, f64)>,
}

/// Infinite stream over `items` that reshuffles on every pass.
struct Cycler<'a> {
    items: &'a [Example],
    stream: RngStream,
    purpose: Purpose,
    epoch: Option<u64>,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Cycler<'a> {
    fn new(items: &'a [Example], stream: RngStream, purpose: Purpose) -> Self {
        Self { items, stream, purpose, epoch: None, order: Vec::new(), pos: 0 }
    }

    fn take(&mut self, n: usize) -> Vec<Example> {
        (0..n).map(|_| self.next_one()).collect()
    }

    fn next_one(&mut self) -> Example {
        let len = self.items.len();
        let epoch = (self.pos / len) as u64;
        if self.epoch != Some(epoch) {
            self.order = (0..len).collect();
            self.order.shuffle(&mut self.stream.derive(self.purpose, epoch, 0));
            self.epoch = Some(epoch);
        }
        let ex = self.items[self.order[self.pos % len]].clone();
        self.pos += 1;
        ex
    }
}

/// Fraction of `examples` whose eval-mode argmax matches the label.
pub fn evaluate<M: Classifier<f32>>(model: &M, examples: &[Example], batch: usize) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in examples.chunks(batch.max(1)) {
        let images: Vec<&[f32]> = chunk.iter().map(|e| &e.image[..]).collect();
        let preds = model.predict(&stack_images(&images)?, Mode::Eval)?;
        for (p, e) in preds.iter().zip(chunk) {
            let label = e.label.ok_or_else(|| Error::Config("evaluation example has no label".into()))?;
            correct += usize::from(p.argmax() == label as usize);
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// MixMatch weight of the unlabeled term at `step`: linear ramp to `lambda_u`.
pub fn mixmatch_lambda(cfg: &SslConfig, step: usize, total_steps: usize) -> f64 {
    let ramp = cfg.rampup_fraction * total_steps as f64;
    if ramp <= 0.0 {
        cfg.lambda_u
    } else {
        cfg.lambda_u * (step as f64 / ramp).min(1.0)
    }
}

fn one_step(config: &TrainConfig, model: &Model<f32>, g: &mut Graph<f32>, x: &[Example], u: &[Example], stream: &RngStream, step: usize) -> Result<LossTerms<f32>> {
    let s = step as u64;
    match config.method {
        Method::Supervised => {
            let batch = supervised_prepare(x, &config.ssl, stream, s)?;
            supervised_loss(model, g, &batch)
        }
        Method::MixMatch => {
            let batch = mixmatch_prepare(model, x, u, &config.ssl, stream, s)?;
            mixmatch_loss(model, g, &batch, mixmatch_lambda(&config.ssl, step, config.total_steps))
        }
        Method::FixMatch => {
            let batch = fixmatch_prepare(x, u, &config.aug_policy, stream, s)?;
            fixmatch_objective(model, g, &batch, config.ssl.tau, config.ssl.lambda_u)
        }
    }
}

/// Runs `total_steps` optimizer steps and scores the EMA weights on `data.test`.
pub fn train(config: &TrainConfig, data: &SplitDataset) -> Result<TrainOutcome> {
    config.validate()?;
    if data.labeled.is_empty() {
        return Err(Error::Config("training needs at least one labeled example".into()));
    }
    let ssl = config.method != Method::Supervised;
    if ssl && data.unlabeled.is_empty() {
        return Err(Error::Config(format!("{} needs a nonempty unlabeled set", config.method)));
    }
    let mut model = Model::<f32>::build(&config.model)?;
    let mut opt = OptState::new(model.params());
    let mut ema = EmaState::new(model.params());
    let stream = RngStream::new(config.seed);
    let mut labeled = Cycler::new(&data.labeled, stream, Purpose::SampleLabeled);
    let mut unlabeled = Cycler::new(&data.unlabeled, stream, Purpose::SampleUnlabeled);
    let (base_lr, wd) = (config.lr(), config.weight_decay());
    let mut metrics = Vec::with_capacity(config.total_steps);
    let mut eval_history = Vec::new();

    for step in 0..config.total_steps {
        let lr = cosine_lr(step, config.total_steps, base_lr)?;
        let x = labeled.take(config.batch_size);
        let u = if ssl { unlabeled.take(config.batch_size * config.ssl.mu) } else { Vec::new() };
        let mut g = Graph::new();
        let terms = one_step(config, &model, &mut g, &x, &u, &stream, step)?;
        let grads = g.backward(terms.total)?;
        let grads: Vec<Tensor<f32>> = terms.pass.params.iter().map(|&v| grads.wrt(v)).collect();
        model.update_running_stats(&terms.pass.batch_stats, BN_MOMENTUM)?;
        sgd_step(model.params_mut(), &grads, &mut opt, lr, config.momentum, wd)?;
        ema_update(&mut ema, model.params(), config.ema_decay)?;
        if let Some(p) = model.params().iter().find(|p| !p.tensor.is_finite()) {
            return Err(TensorError::NonFinite(format!("parameter {} after step {step}", p.name)).into());
        }
        metrics.push(StepMetrics { step, ls: terms.ls, lu: terms.lu, mask_rate: terms.mask_rate, lr });
        if config.eval_every > 0 && (step + 1) % config.eval_every == 0 && step + 1 < config.total_steps {
            let ema_model = model.with_params(&ema.shadow)?;
            eval_history.push((step + 1, evaluate(&ema_model, &data.test, config.eval_batch)?));
        }
    }

    let ema_model = model.with_params(&ema.shadow)?;
    let test_accuracy = evaluate(&ema_model, &data.test, config.eval_batch)?;
    let raw_test_accuracy =
        if config.report_raw_accuracy { Some(evaluate(&model, &data.test, config.eval_batch)?) } else { None };
    Ok(TrainOutcome { model, ema_model, metrics, test_accuracy, raw_test_accuracy, eval_history })
}
