//! Wide-ResNet style classifier over stacked pre/post imagery.
//!
//! Layout: 3x3 stem conv, four pre-activation residual blocks (blocks 2-4
//! halve the spatial size), then BN -> ReLU -> global average pool -> dense.

pub mod checkpoint;

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::prob::ProbDist;
use crate::rng::{Purpose, RngStream};
use crate::tensor::{BatchStats, Graph, Real, Tensor, Var};
use rand_distr::{Distribution, StandardNormal};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub block_filters: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
    /// Average-pool factor applied to the input before the stem (1 = off).
    /// Used by desk-scale configs to shrink 64x64 inputs.
    pub input_downsample: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { in_channels: 6, block_filters: vec![32, 64, 128, 256], num_classes: 2, seed: 0, input_downsample: 1 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: &str| Err(TensorError::Argument(format!("model config: {m}")));
        if self.in_channels == 0 {
            return bad("in_channels must be positive");
        }
        if self.block_filters.is_empty() || self.block_filters.iter().any(|&f| f == 0) {
            return bad("block_filters must be a non-empty list of positive widths");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.input_downsample == 0 {
            return bad("input_downsample must be >= 1");
        }
        Ok(())
    }
}

/// A named parameter or buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Whether weight decay applies.
    pub decay: bool,
}

/// Anything that maps a `[N, C, H, W]` batch to class logits on a graph.
pub trait Classifier<T: Real> {
    fn forward(&self, g: &mut Graph<T>, input: Var, mode: Mode) -> Result<ForwardPass<T>, TensorError>;

    /// Softmax probabilities without recording gradients for later use.
    fn predict(&self, batch: &Tensor<T>, mode: Mode) -> Result<Vec<ProbDist>, TensorError> {
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let pass = self.forward(&mut g, x, mode)?;
        probabilities(g.value(pass.logits))
    }
}

/// Row-wise softmax of a `[N, C]` logits tensor as [`ProbDist`]s.
pub fn probabilities<T: Real>(logits: &Tensor<T>) -> Result<Vec<ProbDist>, TensorError> {
    let probs = logits.softmax_rows()?;
    let c = logits.shape()[1];
    Ok(probs
        .data()
        .chunks(c)
        .map(|row| {
            let v: Vec<f64> = row.iter().map(|x| x.as_f64()).collect();
            let s: f64 = v.iter().sum();
            ProbDist::from_raw(v.into_iter().map(|x| x / s).collect())
        })
        .collect())
}

/// Output of one recorded forward pass.
#[derive(Debug)]
pub struct ForwardPass<T> {
    pub logits: Var,
    /// Trainable leaves in [`Model::params`] order.
    pub params: Vec<Var>,
    /// Train-mode batch statistics, one entry per BN layer.
    pub batch_stats: Vec<BatchStats<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: Vec<NamedTensor<T>>,
    buffers: Vec<NamedTensor<T>>,
}

#[derive(Clone, Copy, Debug)]
struct BlockPlan {
    in_c: usize,
    out_c: usize,
    stride: usize,
}

impl BlockPlan {
    fn projects(&self) -> bool {
        self.in_c != self.out_c || self.stride != 1
    }
}

fn plan(config: &ModelConfig) -> Vec<BlockPlan> {
    let mut prev = config.block_filters[0];
    config
        .block_filters
        .iter()
        .enumerate()
        .map(|(i, &out_c)| {
            let p = BlockPlan { in_c: prev, out_c, stride: if i == 0 { 1 } else { 2 } };
            prev = out_c;
            p
        })
        .collect()
}

struct Builder<'a, T> {
    params: Vec<NamedTensor<T>>,
    buffers: Vec<NamedTensor<T>>,
    stream: &'a RngStream,
}

impl<T: Real> Builder<'_, T> {
    fn he(&mut self, name: String, shape: &[usize], fan_in: usize) {
        let mut rng = self.stream.derive(Purpose::ModelInit, self.params.len() as u64, 0);
        let std = (2.0 / fan_in as f64).sqrt();
        let tensor = Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::from_f64(z * std)
        });
        self.params.push(NamedTensor { name, tensor, decay: true });
    }

    fn conv(&mut self, name: String, out_c: usize, in_c: usize, k: usize) {
        self.he(name, &[out_c, in_c, k, k], in_c * k * k);
    }

    fn bn(&mut self, prefix: &str, c: usize) {
        let p = |s: &str| format!("{prefix}.{s}");
        self.params.push(NamedTensor { name: p("gamma"), tensor: Tensor::full(&[c], T::one()), decay: false });
        self.params.push(NamedTensor { name: p("beta"), tensor: Tensor::zeros(&[c]), decay: false });
        self.buffers.push(NamedTensor { name: p("running_mean"), tensor: Tensor::zeros(&[c]), decay: false });
        self.buffers.push(NamedTensor { name: p("running_var"), tensor: Tensor::full(&[c], T::one()), decay: false });
    }
}

impl<T: Real> Model<T> {
    pub fn build(config: &ModelConfig) -> Result<Self, TensorError> {
        config.validate()?;
        let stream = RngStream::new(config.seed);
        let mut b = Builder { params: Vec::new(), buffers: Vec::new(), stream: &stream };
        let f0 = config.block_filters[0];
        b.conv("stem.conv.weight".into(), f0, config.in_channels, 3);
        for (i, blk) in plan(config).iter().enumerate() {
            let name = format!("block{}", i + 1);
            b.bn(&format!("{name}.bn1"), blk.in_c);
            b.conv(format!("{name}.conv1.weight"), blk.out_c, blk.in_c, 3);
            b.bn(&format!("{name}.bn2"), blk.out_c);
            b.conv(format!("{name}.conv2.weight"), blk.out_c, blk.out_c, 3);
            if blk.projects() {
                b.conv(format!("{name}.shortcut.weight"), blk.out_c, blk.in_c, 1);
            }
        }
        let last = *config.block_filters.last().expect("validated non-empty");
        b.bn("final.bn", last);
        b.he("fc.weight".into(), &[last, config.num_classes], last);
        b.params.push(NamedTensor { name: "fc.bias".into(), tensor: Tensor::zeros(&[config.num_classes]), decay: true });
        Ok(Self { config: config.clone(), params: b.params, buffers: b.buffers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[NamedTensor<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.buffers
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Copy of this model whose parameters are replaced by `params` (same order).
    pub fn with_params(&self, params: &[NamedTensor<T>]) -> Result<Self, TensorError> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.name != b.name || a.tensor.shape() != b.tensor.shape())
        {
            return Err(TensorError::Shape("parameter set does not match model layout".into()));
        }
        Ok(Self { config: self.config.clone(), params: params.to_vec(), buffers: self.buffers.clone() })
    }

    /// Places every parameter on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.tensor.clone())).collect()
    }

    /// Forward pass using already-bound parameter leaves.
    pub fn forward_with(&self, g: &mut Graph<T>, params: &[Var], input: Var, mode: Mode) -> Result<(Var, Vec<BatchStats<T>>), TensorError> {
        if params.len() != self.params.len() {
            return Err(TensorError::Argument(format!("expected {} parameter vars, got {}", self.params.len(), params.len())));
        }
        let s = g.value(input).shape();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(TensorError::Shape(format!(
                "model expects [N, {}, H, W] input, got {s:?}",
                self.config.in_channels
            )));
        }
        let mut cur = Cursor { params, next: 0, bn: 0, stats: Vec::new(), model: self, mode };
        let mut x = input;
        if self.config.input_downsample > 1 {
            x = g.avg_pool(x, self.config.input_downsample)?;
        }
        x = g.conv2d(x, cur.take(), 1, 1)?;
        for blk in plan(&self.config) {
            let o = cur.bn_relu(g, x)?;
            let shortcut = if blk.projects() { None } else { Some(x) };
            let mut h = g.conv2d(o, cur.take(), blk.stride, 1)?;
            h = cur.bn_relu(g, h)?;
            h = g.conv2d(h, cur.take(), 1, 1)?;
            let skip = match shortcut {
                Some(v) => v,
                None => g.conv2d(o, cur.take(), blk.stride, 0)?,
            };
            x = g.add(h, skip)?;
        }
        x = cur.bn_relu(g, x)?;
        x = g.global_avg_pool(x)?;
        let (w, b) = (cur.take(), cur.take());
        let logits = g.dense(x, w, b)?;
        debug_assert_eq!(cur.next, params.len());
        Ok((logits, cur.stats))
    }

    /// Folds train-mode batch statistics into the running buffers.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>], momentum: f64) -> Result<(), TensorError> {
        if stats.len() * 2 != self.buffers.len() {
            return Err(TensorError::Argument(format!(
                "expected {} batch-stat entries, got {}",
                self.buffers.len() / 2,
                stats.len()
            )));
        }
        let m = T::from_f64(momentum);
        let rest = T::one() - m;
        for (pair, st) in self.buffers.chunks_mut(2).zip(stats) {
            for (r, &b) in pair[0].tensor.data_mut().iter_mut().zip(&st.mean) {
                *r = m * *r + rest * b;
            }
            for (r, &b) in pair[1].tensor.data_mut().iter_mut().zip(&st.var) {
                *r = m * *r + rest * b;
            }
        }
        Ok(())
    }
}

struct Cursor<'a, T> {
    params: &'a [Var],
    next: usize,
    bn: usize,
    stats: Vec<BatchStats<T>>,
    model: &'a Model<T>,
    mode: Mode,
}

impl<T: Real> Cursor<'_, T> {
    fn take(&mut self) -> Var {
        let v = self.params[self.next];
        self.next += 1;
        v
    }

    fn bn_relu(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var, TensorError> {
        let (gamma, beta) = (self.take(), self.take());
        let eps = T::from_f64(BN_EPS);
        let y = match self.mode {
            Mode::Train => {
                let (y, st) = g.batch_norm_train(x, gamma, beta, eps)?;
                self.stats.push(st);
                y
            }
            Mode::Eval => {
                let rm = self.model.buffers[2 * self.bn].tensor.data();
                let rv = self.model.buffers[2 * self.bn + 1].tensor.data();
                g.batch_norm_eval(x, gamma, beta, rm, rv, eps)?
            }
        };
        self.bn += 1;
        Ok(g.relu(y))
    }
}

impl<T: Real> Classifier<T> for Model<T> {
    fn forward(&self, g: &mut Graph<T>, input: Var, mode: Mode) -> Result<ForwardPass<T>, TensorError> {
        let params = self.bind(g);
        let (logits, batch_stats) = self.forward_with(g, &params, input, mode)?;
        Ok(ForwardPass { logits, params, batch_stats })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini(seed: u64) -> ModelConfig {
        ModelConfig { block_filters: vec![4, 8, 8, 8], seed, ..ModelConfig::default() }
    }

    #[test]
    fn parameter_names_unique_and_stable() {
        let m = Model::<f32>::build(&mini(3)).unwrap();
        let mut names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        let again = Model::<f32>::build(&mini(99)).unwrap();
        assert!(m.params().iter().zip(again.params()).all(|(a, b)| a.name == b.name));
        assert_eq!(m.parameter_count(), again.parameter_count());
    }

    #[test]
    fn block1_uses_identity_skip_others_project() {
        let m = Model::<f32>::build(&ModelConfig::default()).unwrap();
        let names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
        assert!(!names.contains(&"block1.shortcut.weight"));
        for b in 2..=4 {
            assert!(names.contains(&format!("block{b}.shortcut.weight").as_str()));
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let m = Model::<f32>::build(&mini(0)).unwrap();
        let x = Tensor::zeros(&[2, 3, 16, 16]);
        assert!(matches!(m.predict(&x, Mode::Eval), Err(TensorError::Shape(_))));
    }

    #[test]
    fn invalid_configs() {
        assert!(Model::<f32>::build(&ModelConfig { block_filters: vec![], ..ModelConfig::default() }).is_err());
        assert!(Model::<f32>::build(&ModelConfig { block_filters: vec![4, 0], ..ModelConfig::default() }).is_err());
    }
}
