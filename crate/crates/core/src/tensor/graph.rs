//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and whatever it needs for
//! the backward pass. Nodes are created in execution order, so the tape is
//! already topologically sorted and `backward` simply walks it in reverse.

use super::kernels::{self, ConvGeometry};
use super::{Real, Tensor};
use crate::error::TensorError;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one train-mode batch norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n - 1) variance, the quantity tracked by running statistics.
    pub var: Vec<T>,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, geom: ConvGeometry },
    BatchNorm { input: Var, gamma: Var, beta: Var, center: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu { input: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: T },
    AvgPool { input: Var, k: usize },
    GlobalAvgPool { input: Var },
    MatMul { a: Var, b: Var },
    AddBias { input: Var, bias: Var },
    Softmax { input: Var },
    CrossEntropy { logits: Var, targets: Vec<T>, weights: Vec<T>, probs: Vec<T> },
    SquaredDistance { input: Var, target: Vec<T> },
    Sum { input: Var },
    SliceRows { input: Var, start: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records executed operations for later differentiation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when it was not on the loss path.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn shape_err<R>(msg: String) -> Result<R, TensorError> {
    Err(TensorError::Shape(msg))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        if stride == 0 {
            return Err(TensorError::Argument("conv2d stride must be positive".into()));
        }
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return shape_err(format!("conv2d expects [N,C,H,W] and [F,C,kh,kw], got {xs:?} and {ks:?}"));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (f, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c {
            return shape_err(format!("conv2d channel mismatch: input has {c}, kernel expects {kc}"));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return shape_err(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ));
        }
        let geom = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(self.value(input).data(), n, self.value(kernel).data(), f, &geom);
        let value = Tensor::new(&[n, f, geom.out_h, geom.out_w], out)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(value, Op::Conv2d { input, kernel, geom }, rg))
    }

    fn check_bn_args(&self, input: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize), TensorError> {
        let xs = self.value(input).shape();
        if xs.len() != 4 {
            return shape_err(format!("batch_norm expects [N,C,H,W], got {xs:?}"));
        }
        let c = xs[1];
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return shape_err(format!("batch_norm {name} shape {:?}, expected [{c}]", self.value(v).shape()));
            }
        }
        Ok((xs[0], c, xs[2] * xs[3]))
    }

    /// Train-mode batch norm: normalizes by the batch moments and returns them.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>), TensorError> {
        let (n, c, hw) = self.check_bn_args(input, gamma, beta)?;
        let count = n * hw;
        if count < 2 {
            return Err(TensorError::DegenerateBatch(count));
        }
        let (mean, var) = kernels::channel_moments(self.value(input).data(), n, c, hw);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let value = self.normalize(input, gamma, beta, &mean, &inv_std, n, c, hw)?;
        let correction = T::from_usize(count) / T::from_usize(count - 1);
        let stats = BatchStats { mean: mean.clone(), var: var.iter().map(|&v| v * correction).collect() };
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        let var_out = self.push(value, Op::BatchNorm { input, gamma, beta, center: mean, inv_std, train: true }, rg);
        Ok((var_out, stats))
    }

    /// Eval-mode batch norm using supplied running statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var, TensorError> {
        let (n, c, hw) = self.check_bn_args(input, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return shape_err(format!("batch_norm running stats must have {c} channels"));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let value = self.normalize(input, gamma, beta, running_mean, &inv_std, n, c, hw)?;
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            Op::BatchNorm { input, gamma, beta, center: running_mean.to_vec(), inv_std, train: false },
            rg,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        center: &[T],
        inv_std: &[T],
        n: usize,
        c: usize,
        hw: usize,
    ) -> Result<Tensor<T>, TensorError> {
        let x = self.value(input);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); x.len()];
        for bi in 0..n {
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                let (scale, m, shift) = (g[ch] * inv_std[ch], center[ch], b[ch]);
                for (o, &v) in out[off..off + hw].iter_mut().zip(&x.data()[off..off + hw]) {
                    *o = (v - m) * scale + shift;
                }
            }
        }
        Tensor::new(x.shape(), out)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(input);
        self.push(value, Op::Relu { input }, rg)
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary_same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.rg(input);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Non-overlapping `k x k` average pooling.
    pub fn avg_pool(&mut self, input: Var, k: usize) -> Result<Var, TensorError> {
        let xs = self.value(input).shape().to_vec();
        if xs.len() != 4 || k == 0 || xs[2] % k != 0 || xs[3] % k != 0 {
            return shape_err(format!("avg_pool({k}) needs [N,C,H,W] with H, W divisible by {k}, got {xs:?}"));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / k, w / k);
        let x = self.value(input).data();
        let norm = T::one() / T::from_usize(k * k);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for y in 0..h {
                for xx in 0..w {
                    dst[(y / k) * ow + xx / k] += src[y * w + xx];
                }
            }
            for v in dst.iter_mut() {
                *v *= norm;
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::AvgPool { input, k }, rg))
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var, TensorError> {
        let xs = self.value(input).shape().to_vec();
        if xs.len() != 4 {
            return shape_err(format!("global_avg_pool expects [N,C,H,W], got {xs:?}"));
        }
        let hw = xs[2] * xs[3];
        let norm = T::one() / T::from_usize(hw);
        let data = self.value(input).data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * norm).collect();
        let value = Tensor::new(&[xs[0], xs[1]], data)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::GlobalAvgPool { input }, rg))
    }

    /// `[N,I] x [I,O] -> [N,O]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul shapes {sa:?} x {sb:?} incompatible"));
        }
        let (n, i, o) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); n * o];
        T::gemm(n, i, o, T::one(), self.value(a).data(), (i as isize, 1), self.value(b).data(), (o as isize, 1), T::zero(), &mut out, (o as isize, 1));
        let value = Tensor::new(&[n, o], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul { a, b }, rg))
    }

    /// `[N,O] + [O]` broadcast over rows.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var, TensorError> {
        let xs = self.value(input).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 2 || bs != [xs[1]] {
            return shape_err(format!("add_bias shapes {xs:?} + {bs:?} incompatible"));
        }
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(input).clone();
        for row in value.data_mut().chunks_mut(xs[1]) {
            for (v, &bb) in row.iter_mut().zip(&b) {
                *v += bb;
            }
        }
        let rg = self.rg(input) || self.rg(bias);
        Ok(self.push(value, Op::AddBias { input, bias }, rg))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let h = self.matmul(input, weight)?;
        self.add_bias(h, bias)
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var, TensorError> {
        let value = self.value(input).softmax_rows()?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Softmax { input }, rg))
    }

    /// `sum_i w_i * H(t_i, softmax(logits_i))` as a scalar.
    ///
    /// Targets and weights are constants (no gradient flows into them).
    pub fn weighted_cross_entropy(&mut self, logits: Var, targets: &Tensor<T>, weights: &[T]) -> Result<Var, TensorError> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 || targets.shape() != ls.as_slice() || weights.len() != ls[0] {
            return shape_err(format!(
                "cross entropy: logits {ls:?}, targets {:?}, {} weights",
                targets.shape(),
                weights.len()
            ));
        }
        let c = ls[1];
        let x = self.value(logits).data();
        let mut probs = x.to_vec();
        let mut total = T::zero();
        for (i, row) in x.chunks(c).enumerate() {
            let lse = kernels::log_sum_exp(row);
            let t = &targets.data()[i * c..(i + 1) * c];
            let h: T = row.iter().zip(t).map(|(&z, &ti)| -ti * (z - lse)).sum();
            total += weights[i] * h;
            kernels::softmax_in_place(&mut probs[i * c..(i + 1) * c]);
        }
        if !total.is_finite() {
            return Err(TensorError::NonFinite("cross entropy".into()));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy { logits, targets: targets.data().to_vec(), weights: weights.to_vec(), probs },
            rg,
        ))
    }

    /// Mean cross entropy between target distributions and `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var, TensorError> {
        let ts = targets.shape();
        if ts.len() != 2 {
            return shape_err(format!("targets must be [N, C], got {ts:?}"));
        }
        let tol = T::from_f64(1e-6);
        for (i, row) in targets.data().chunks(ts[1]).enumerate() {
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol || row.iter().any(|&v| v < T::zero()) {
                return Err(TensorError::Argument(format!("target row {i} is not a probability distribution")));
            }
        }
        let w = vec![T::one() / T::from_usize(ts[0]); ts[0]];
        self.weighted_cross_entropy(logits, targets, &w)
    }

    /// `sum (x - target)^2` as a scalar; the target is a constant.
    pub fn squared_distance(&mut self, input: Var, target: &Tensor<T>) -> Result<Var, TensorError> {
        if self.value(input).shape() != target.shape() {
            return shape_err(format!(
                "squared_distance: {:?} vs target {:?}",
                self.value(input).shape(),
                target.shape()
            ));
        }
        let total: T = self.value(input).data().iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let rg = self.rg(input);
        Ok(self.push(Tensor::scalar(total), Op::SquaredDistance { input, target: target.data().to_vec() }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).sum();
        let rg = self.rg(input);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    pub fn slice_rows(&mut self, input: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let value = self.value(input).slice_rows(start, end)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::SliceRows { input, start }, rg))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(node, &dy, &mut grads)?;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, delta: Tensor<T>) {
        if !self.rg(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<(), TensorError> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geom } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let (dx, dk) = kernels::conv2d_backward(
                    x.data(),
                    x.shape()[0],
                    k.data(),
                    k.shape()[0],
                    geom,
                    dy.data(),
                    self.rg(*input),
                    self.rg(*kernel),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, Tensor::new(x.shape(), dx)?);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, *kernel, Tensor::new(k.shape(), dk)?);
                }
            }
            Op::BatchNorm { input, gamma, beta, center, inv_std, train } => {
                let x = self.value(*input);
                let s = x.shape();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let g = self.value(*gamma).data();
                let mut d_gamma = vec![T::zero(); c];
                let mut d_beta = vec![T::zero(); c];
                for bi in 0..n {
                    for ch in 0..c {
                        let off = (bi * c + ch) * hw;
                        for (&d, &v) in dy.data()[off..off + hw].iter().zip(&x.data()[off..off + hw]) {
                            d_beta[ch] += d;
                            d_gamma[ch] += d * (v - center[ch]) * inv_std[ch];
                        }
                    }
                }
                if self.rg(*input) {
                    let mut dx = vec![T::zero(); x.len()];
                    let m = T::from_usize(n * hw);
                    for bi in 0..n {
                        for ch in 0..c {
                            let off = (bi * c + ch) * hw;
                            let scale = g[ch] * inv_std[ch];
                            let src = &x.data()[off..off + hw];
                            let d = &dy.data()[off..off + hw];
                            for j in 0..hw {
                                dx[off + j] = if *train {
                                    let xhat = (src[j] - center[ch]) * inv_std[ch];
                                    scale / m * (m * d[j] - d_beta[ch] - xhat * d_gamma[ch])
                                } else {
                                    scale * d[j]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new(s, dx)?);
                }
                self.accumulate(grads, *gamma, Tensor::new(&[c], d_gamma)?);
                self.accumulate(grads, *beta, Tensor::new(&[c], d_beta)?);
            }
            Op::Relu { input } => {
                let data = node.value.data().iter().zip(dy.data()).map(|(&y, &d)| if y > T::zero() { d } else { T::zero() }).collect();
                self.accumulate(grads, *input, Tensor::new(dy.shape(), data)?);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = dy.data().iter().zip(vb.data()).map(|(&d, &y)| d * y).collect();
                let db = dy.data().iter().zip(va.data()).map(|(&d, &x)| d * x).collect();
                self.accumulate(grads, *a, Tensor::new(dy.shape(), da)?);
                self.accumulate(grads, *b, Tensor::new(dy.shape(), db)?);
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                self.accumulate(grads, *input, dy.map(|d| d * f));
            }
            Op::AvgPool { input, k } => {
                let s = self.value(*input).shape().to_vec();
                let (h, w) = (s[2], s[3]);
                let (oh, ow) = (h / k, w / k);
                let norm = T::one() / T::from_usize(k * k);
                let mut dx = vec![T::zero(); s.iter().product()];
                for plane in 0..s[0] * s[1] {
                    let src = &dy.data()[plane * oh * ow..(plane + 1) * oh * ow];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[y * w + xx] = src[(y / k) * ow + xx / k] * norm;
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(&s, dx)?);
            }
            Op::GlobalAvgPool { input } => {
                let s = self.value(*input).shape().to_vec();
                let hw = s[2] * s[3];
                let norm = T::one() / T::from_usize(hw);
                let mut dx = Vec::with_capacity(s.iter().product());
                for &d in dy.data() {
                    dx.extend(std::iter::repeat_n(d * norm, hw));
                }
                self.accumulate(grads, *input, Tensor::new(&s, dx)?);
            }
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, i) = (va.shape()[0], va.shape()[1]);
                let o = vb.shape()[1];
                if self.rg(*a) {
                    let mut da = vec![T::zero(); n * i];
                    T::gemm(n, o, i, T::one(), dy.data(), (o as isize, 1), vb.data(), (1, o as isize), T::zero(), &mut da, (i as isize, 1));
                    self.accumulate(grads, *a, Tensor::new(&[n, i], da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); i * o];
                    T::gemm(i, n, o, T::one(), va.data(), (1, i as isize), dy.data(), (o as isize, 1), T::zero(), &mut db, (o as isize, 1));
                    self.accumulate(grads, *b, Tensor::new(&[i, o], db)?);
                }
            }
            Op::AddBias { input, bias } => {
                let o = dy.shape()[1];
                let mut db = vec![T::zero(); o];
                for row in dy.data().chunks(o) {
                    for (acc, &d) in db.iter_mut().zip(row) {
                        *acc += d;
                    }
                }
                self.accumulate(grads, *input, dy.clone());
                self.accumulate(grads, *bias, Tensor::new(&[o], db)?);
            }
            Op::Softmax { input } => {
                let c = dy.shape()[1];
                let mut dx = Vec::with_capacity(dy.len());
                for (yr, dr) in node.value.data().chunks(c).zip(dy.data().chunks(c)) {
                    let dot: T = yr.iter().zip(dr).map(|(&y, &d)| y * d).sum();
                    dx.extend(yr.iter().zip(dr).map(|(&y, &d)| y * (d - dot)));
                }
                self.accumulate(grads, *input, Tensor::new(dy.shape(), dx)?);
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let upstream = dy.data()[0];
                let c = self.value(*logits).shape()[1];
                let mut dx = vec![T::zero(); probs.len()];
                for (i, w) in weights.iter().enumerate() {
                    let t = &targets[i * c..(i + 1) * c];
                    let mass: T = t.iter().copied().sum();
                    for j in 0..c {
                        dx[i * c + j] = upstream * *w * (probs[i * c + j] * mass - t[j]);
                    }
                }
                self.accumulate(grads, *logits, Tensor::new(self.value(*logits).shape(), dx)?);
            }
            Op::SquaredDistance { input, target } => {
                let upstream = dy.data()[0];
                let two = T::from_f64(2.0);
                let dx = self.value(*input).data().iter().zip(target).map(|(&x, &t)| upstream * two * (x - t)).collect();
                self.accumulate(grads, *input, Tensor::new(self.value(*input).shape(), dx)?);
            }
            Op::Sum { input } => {
                let upstream = dy.data()[0];
                self.accumulate(grads, *input, Tensor::full(self.value(*input).shape(), upstream));
            }
            Op::SliceRows { input, start } => {
                let s = self.value(*input).shape().to_vec();
                let stride = self.value(*input).len() / s[0];
                let mut dx = vec![T::zero(); self.value(*input).len()];
                dx[start * stride..start * stride + dy.len()].copy_from_slice(dy.data());
                self.accumulate(grads, *input, Tensor::new(&s, dx)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_conv() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = g.param(Tensor::full(&[1, 1, 1, 1], 1.0));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y), &Tensor::full(&[1, 1, 3, 3], 1.0));
    }

    #[test]
    fn two_by_two_conv_sums_products() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let k = g.param(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[10.0]);
    }

    #[test]
    fn conv_errors() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 2, 3, 3]));
        let k = g.param(Tensor::zeros(&[1, 3, 1, 1]));
        assert!(matches!(g.conv2d(x, k, 1, 0), Err(TensorError::Shape(_))));
        let k2 = g.param(Tensor::zeros(&[1, 2, 1, 1]));
        assert!(matches!(g.conv2d(x, k2, 0, 0), Err(TensorError::Argument(_))));
        let k3 = g.param(Tensor::zeros(&[1, 2, 5, 5]));
        assert!(matches!(g.conv2d(x, k3, 1, 0), Err(TensorError::Shape(_))));
        assert!(g.conv2d(x, k3, 1, 1).is_ok());
    }

    #[test]
    fn conv_output_size_with_stride_and_padding() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2, 3, 8, 8]));
        let k = g.param(Tensor::zeros(&[5, 3, 3, 3]));
        let y = g.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 5, 4, 4]);
    }

    #[test]
    fn batch_norm_fixed_point_and_zero_scale() {
        // Each channel of this batch already has zero mean and unit (biased) variance.
        let data = vec![1.0f64, -1.0, 2.0, 0.0, 1.0, -1.0, -2.0, 0.0];
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[2, 2, 1, 2], data.clone()).unwrap());
        let gamma = g.param(Tensor::full(&[2], 1.0));
        let beta = g.param(Tensor::zeros(&[2]));
        let (y, _) = g.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        // channel 1 values are {2, 0, -2, 0}: variance 2, so only channel 0 is a fixed point.
        let out = g.value(y).data();
        for idx in [0usize, 1, 4, 5] {
            assert!((out[idx] - data[idx]).abs() < 1e-3);
        }

        let gamma0 = g.param(Tensor::zeros(&[2]));
        let beta3 = g.param(Tensor::new(&[2], vec![0.25, -3.0]).unwrap());
        let (y0, _) = g.batch_norm_train(x, gamma0, beta3, 1e-5).unwrap();
        assert_eq!(g.value(y0).data(), &[0.25, 0.25, -3.0, -3.0, 0.25, 0.25, -3.0, -3.0]);
    }

    #[test]
    fn batch_norm_rejects_degenerate_batch() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 3, 1, 1]));
        let gamma = g.param(Tensor::full(&[3], 1.0));
        let beta = g.param(Tensor::zeros(&[3]));
        assert_eq!(g.batch_norm_train(x, gamma, beta, 1e-5).unwrap_err(), TensorError::DegenerateBatch(1));
        assert!(g.batch_norm_eval(x, gamma, beta, &[0.0; 3], &[1.0; 3], 1e-5).is_ok());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut g = Graph::<f64>::new();
        let logits = g.param(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap());
        let t = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        let l = g.softmax_cross_entropy(logits, &t).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

        let soft = Tensor::new(&[1, 2], vec![0.5, 0.5]).unwrap();
        let l = g.softmax_cross_entropy(logits, &soft).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

        let sat = g.param(Tensor::new(&[1, 2], vec![30.0, -30.0]).unwrap());
        let l = g.softmax_cross_entropy(sat, &t).unwrap();
        assert!(g.value(l).data()[0] < 1e-9);

        let bad = Tensor::new(&[1, 2], vec![0.7, 0.7]).unwrap();
        assert!(matches!(g.softmax_cross_entropy(logits, &bad), Err(TensorError::Argument(_))));
    }

    #[test]
    fn backward_simple_cases() {
        let mut g = Graph::<f64>::new();
        let p = g.param(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let unused = g.param(Tensor::new(&[2], vec![4.0, 4.0]).unwrap());
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(p).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0]);

        let sq = g.mul(p, p).unwrap();
        let s2 = g.sum(sq);
        let grads = g.backward(s2).unwrap();
        assert_eq!(grads.wrt(p).data(), &[2.0, -4.0, 1.0]);

        assert!(matches!(g.backward(sq), Err(TensorError::Argument(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.input(Tensor::full(&[2], 3.0));
        let p = g.param(Tensor::full(&[2], 1.0));
        let y = g.mul(c, p).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(p).data(), &[3.0, 3.0]);
    }
}
