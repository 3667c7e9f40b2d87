//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Tape`] records every operation of one forward pass. Values live on the
//! tape; callers hold [`Var`] handles. [`Tape::backward`] walks the tape in
//! reverse and returns a [`Gradients`] table indexed by the same handles.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{cfg_err, data_err, dim_err, Error, Result};
use crate::kernels::{self, Conv2dSpec, ConvDims, PoolDims};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pooling window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub include_pad: bool,
}

impl PoolSpec {
    /// Non-overlapping window along the last axis.
    pub fn along_time(kernel: usize) -> Self {
        PoolSpec { kernel: (1, kernel), stride: (1, kernel), padding: (0, 0), include_pad: true }
    }
}

/// Batch statistics produced by a training-mode batch norm, so the owner of
/// the running averages can fold them in.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (divide-by-N) variance.
    pub var: Vec<T>,
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, dims: ConvDims },
    AvgPool { input: Var, dims: PoolDims },
    PadLast { input: Var, left: usize, right: usize },
    Linear { input: Var, weight: Var, bias: Option<Var>, rows: usize, din: usize, dout: usize },
    Bmm { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    BatchNorm { input: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, batch_stats: bool, dims: (usize, usize, usize) },
    Elu { input: Var },
    MulConst { input: Var, factor: Vec<T> },
    Scale { input: Var, factor: T },
    ScaleBy { input: Var, scalar: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Softmax { input: Var, width: usize },
    CrossEntropy { logits: Var, probs: Vec<T>, targets: Vec<usize>, classes: usize },
    Reshape { input: Var },
    Permute { input: Var, perm: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { input: Var, axis: usize, start: usize },
    Sum { input: Var },
    Custom { inputs: Vec<Var>, backward: VjpFn<T> },
}

/// Vector-Jacobian product of a custom operation: output gradient in, one
/// gradient per input out.
pub type VjpFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation recorder for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(Var, ParamId)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(dim_err!("{what}: shapes {:?} and {:?} differ", a, b))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), bindings: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable input whose gradient is reported by
    /// [`Tape::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a parameter from `store`; trainable parameters get gradients
    /// that [`Gradients::accumulate_into`] routes back to the store.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let trainable = p.trainable;
        let value = Tensor::new(p.tensor.shape(), p.tensor.data().to_vec()).expect("parameter tensors are well-formed");
        let v = self.push(value, Op::Leaf, trainable);
        if trainable {
            self.bindings.push((v, id));
        }
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn record(&mut self, shape: &[usize], data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let needs = inputs.iter().any(|&v| self.needs(v));
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, op, needs))
    }

    /// 2-D convolution over `[B, Cin, H, W]` with weight `[Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(dim_err!("conv2d expects 4-D input and weight, got {:?} and {:?}", xs, ws));
        }
        let g = spec.groups;
        if g == 0 || xs[1] % g != 0 || ws[0] % g != 0 {
            return Err(cfg_err!("groups {} must divide input channels {} and output channels {}", g, xs[1], ws[0]));
        }
        if ws[1] != xs[1] / g {
            return Err(dim_err!("conv2d weight expects {} input channels per group, input has {}", ws[1], xs[1] / g));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(dim_err!("conv2d bias shape {:?}, expected [{}]", self.shape(b), ws[0]));
            }
        }
        let ho = kernels::window_out(xs[2], ws[2], spec.stride.0, spec.padding.0, spec.dilation.0);
        let wo = kernels::window_out(xs[3], ws[3], spec.stride.1, spec.padding.1, spec.dilation.1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(dim_err!("conv2d kernel {:?} exceeds padded input {:?}", &ws[2..], &xs[2..]));
        };
        let dims = ConvDims { batch: xs[0], cin: xs[1], h: xs[2], w: xs[3], cout: ws[0], kh: ws[2], kw: ws[3], ho, wo, spec };
        let out = kernels::conv2d_forward(&dims, self.data(input), self.data(weight), bias.map(|b| self.data(b)));
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.record(&[xs[0], ws[0], ho, wo], out, Op::Conv2d { input, weight, bias, dims }, &inputs)
    }

    /// Average pooling over the two trailing axes of a 4-D tensor.
    pub fn avg_pool(&mut self, input: Var, spec: PoolSpec) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(dim_err!("avg_pool expects 4-D input, got {:?}", xs));
        }
        if spec.kernel.0 == 0 || spec.kernel.1 == 0 || spec.stride.0 == 0 || spec.stride.1 == 0 {
            return Err(cfg_err!("avg_pool kernel and stride must be positive"));
        }
        if spec.padding.0 >= spec.kernel.0 || spec.padding.1 >= spec.kernel.1 {
            return Err(cfg_err!("avg_pool padding {:?} must be below kernel {:?}", spec.padding, spec.kernel));
        }
        let ho = kernels::window_out(xs[2], spec.kernel.0, spec.stride.0, spec.padding.0, 1);
        let wo = kernels::window_out(xs[3], spec.kernel.1, spec.stride.1, spec.padding.1, 1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(dim_err!("avg_pool window {:?} larger than padded input {:?}", spec.kernel, &xs[2..]));
        };
        let dims = PoolDims {
            outer: xs[0] * xs[1],
            h: xs[2],
            w: xs[3],
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            ho,
            wo,
            include_pad: spec.include_pad,
        };
        let out = kernels::avg_pool_forward(&dims, self.data(input));
        self.record(&[xs[0], xs[1], ho, wo], out, Op::AvgPool { input, dims }, &[input])
    }

    /// Zero padding of the last axis.
    pub fn pad_last(&mut self, input: Var, left: usize, right: usize) -> Result<Var> {
        let mut shape = self.shape(input).to_vec();
        let len = *shape.last().ok_or_else(|| dim_err!("pad of a 0-D tensor"))?;
        let new_len = left + len + right;
        let mut out = Vec::with_capacity(numel(&shape) / len * new_len);
        for row in self.data(input).chunks(len) {
            out.extend(core::iter::repeat_n(T::zero(), left));
            out.extend_from_slice(row);
            out.extend(core::iter::repeat_n(T::zero(), right));
        }
        *shape.last_mut().unwrap() = new_len;
        self.record(&shape, out, Op::PadLast { input, left, right }, &[input])
    }

    /// Affine map over the trailing axis, weight `[Dout, Din]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[1]) {
            return Err(dim_err!("linear: input {:?} incompatible with weight {:?}", xs, ws));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(dim_err!("linear bias shape {:?}, expected [{}]", self.shape(b), ws[0]));
            }
        }
        let (din, dout) = (ws[1], ws[0]);
        let rows = numel(&xs) / din;
        let out = kernels::linear_forward(self.data(input), self.data(weight), bias.map(|b| self.data(b)), rows, din, dout);
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.record(&shape, out, Op::Linear { input, weight, bias, rows, din, dout }, &inputs)
    }

    /// Batched matrix product over the two trailing axes; leading axes must
    /// agree exactly. With `trans_b` the right operand is read transposed.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() < 2 || as_.len() != bs.len() || as_[..as_.len() - 2] != bs[..bs.len() - 2] {
            return Err(dim_err!("matmul: incompatible shapes {:?} and {:?}", as_, bs));
        }
        let r = as_.len();
        let (m, k) = (as_[r - 2], as_[r - 1]);
        let (kb, n) = if trans_b { (bs[r - 1], bs[r - 2]) } else { (bs[r - 2], bs[r - 1]) };
        if k != kb {
            return Err(dim_err!("matmul: inner dimensions {} and {} differ", k, kb));
        }
        let batch = numel(&as_[..r - 2]);
        let out = kernels::bmm_forward(self.data(a), self.data(b), batch, m, k, n, trans_b);
        let mut shape = as_[..r - 2].to_vec();
        shape.extend([m, n]);
        self.record(&shape, out, Op::Bmm { a, b, batch, m, k, n, trans_b }, &[a, b])
    }

    /// Per-channel batch normalization of `[B, C, ...]`.
    ///
    /// With `stats = None` the batch statistics are used (training mode) and
    /// returned; otherwise the given running mean and variance are applied.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xs = self.shape(input).to_vec();
        if xs.len() < 2 {
            return Err(dim_err!("batch_norm expects [B, C, ...], got {:?}", xs));
        }
        let (batch, channels) = (xs[0], xs[1]);
        let inner = numel(&xs[2..]);
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(dim_err!("batch_norm affine parameters must have shape [{}]", channels));
        }
        let (mean, var, stats) = match running {
            None => {
                if batch < 2 {
                    return Err(cfg_err!("batch_norm in training mode needs a batch of at least 2"));
                }
                let s = kernels::bn_batch_stats(self.data(input), batch, channels, inner);
                let stats = BatchStats { mean: s.mean.clone(), var: s.var.clone(), count: batch * inner };
                (s.mean, s.var, Some(stats))
            }
            Some((m, v)) => {
                if m.len() != channels || v.len() != channels {
                    return Err(dim_err!("batch_norm running statistics must have {} entries", channels));
                }
                (m.to_vec(), v.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let out = kernels::bn_apply(self.data(input), self.data(gamma), self.data(beta), &mean, &inv_std, batch, channels, inner);
        let batch_stats = stats.is_some();
        let op = Op::BatchNorm { input, gamma, beta, mean, inv_std, batch_stats, dims: (batch, channels, inner) };
        let v = self.record(&xs, out, op, &[input, gamma, beta])?;
        Ok((v, stats))
    }

    pub fn elu(&mut self, input: Var) -> Result<Var> {
        let out = self.data(input).iter().map(|&x| if x > T::zero() { x } else { x.exp() - T::one() }).collect();
        let shape = self.shape(input).to_vec();
        self.record(&shape, out, Op::Elu { input }, &[input])
    }

    /// Multiplies by a fixed elementwise factor (a dropout mask, for example).
    pub fn mul_const(&mut self, input: Var, factor: Vec<T>) -> Result<Var> {
        if factor.len() != self.value(input).len() {
            return Err(dim_err!("mul_const factor length {} vs {}", factor.len(), self.value(input).len()));
        }
        let out = self.data(input).iter().zip(&factor).map(|(&x, &f)| x * f).collect();
        let shape = self.shape(input).to_vec();
        self.record(&shape, out, Op::MulConst { input, factor }, &[input])
    }

    /// Inverted dropout: zeroes entries with probability `p` and rescales
    /// survivors by `1/(1-p)`. Identity outside training.
    pub fn dropout<R: rand::Rng + ?Sized>(&mut self, input: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(cfg_err!("dropout probability {} outside [0, 1)", p));
        }
        if !training || p == 0.0 {
            return Ok(input);
        }
        let scale = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask = (0..self.value(input).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { scale })
            .collect();
        self.mul_const(input, mask)
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let out = self.data(input).iter().map(|&x| x * factor).collect();
        let shape = self.shape(input).to_vec();
        self.record(&shape, out, Op::Scale { input, factor }, &[input])
    }

    /// Multiplies every entry by a learnable one-element tensor.
    pub fn scale_by(&mut self, input: Var, scalar: Var) -> Result<Var> {
        if self.value(scalar).len() != 1 {
            return Err(dim_err!("scale_by expects a one-element scalar, got {:?}", self.shape(scalar)));
        }
        let s = self.data(scalar)[0];
        let out = self.data(input).iter().map(|&x| x * s).collect();
        let shape = self.shape(input).to_vec();
        self.record(&shape, out, Op::ScaleBy { input, scalar }, &[input, scalar])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.shape(a), self.shape(b), "add")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.record(&shape, out, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.shape(a), self.shape(b), "mul")?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.record(&shape, out, Op::Mul { a, b }, &[a, b])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let width = *self.shape(input).last().unwrap_or(&1);
        self.topk_softmax(input, width)
    }

    /// Softmax over the last axis after discarding all but the `keep`
    /// largest entries of each row (ties keep the lowest index). The
    /// selection is a constant with respect to differentiation.
    pub fn topk_softmax(&mut self, input: Var, keep: usize) -> Result<Var> {
        let width = *self.shape(input).last().ok_or_else(|| dim_err!("softmax of a 0-D tensor"))?;
        if keep == 0 || keep > width {
            return Err(cfg_err!("top-k keep count {} outside [1, {}]", keep, width));
        }
        let out = kernels::masked_softmax_forward(self.data(input), width, keep);
        let shape = self.shape(input).to_vec();
        self.record(&shape, out, Op::Softmax { input, width }, &[input])
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != targets.len() {
            return Err(dim_err!("cross_entropy: logits {:?} for {} targets", ls, targets.len()));
        }
        let classes = ls[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(data_err!("target class {} outside [0, {})", bad, classes));
        }
        let probs = kernels::masked_softmax_forward(self.data(logits), classes, classes);
        let mut loss = T::zero();
        for (row, &t) in self.data(logits).chunks(classes).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss = loss + lse - row[t];
        }
        loss = loss / T::from_usize_lossy(targets.len());
        let op = Op::CrossEntropy { logits, probs, targets: targets.to_vec(), classes };
        self.record(&[1], vec![loss], op, &[logits])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(input).len() {
            return Err(dim_err!("cannot reshape {:?} into {:?}", self.shape(input), shape));
        }
        let out = self.data(input).to_vec();
        self.record(shape, out, Op::Reshape { input }, &[input])
    }

    pub fn permute(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(dim_err!("invalid permutation {:?} for shape {:?}", perm, shape));
        }
        let out = kernels::permute(self.data(input), &shape, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        self.record(&out_shape, out, Op::Permute { input, perm: perm.to_vec() }, &[input])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or_else(|| dim_err!("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(dim_err!("concat axis {} out of range for {:?}", axis, first));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(dim_err!("concat: shape {:?} incompatible with {:?}", s, first));
            }
            total += s[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * chunk..][..chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.record(&shape, out, Op::Concat { inputs: inputs.to_vec(), axis }, inputs)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(dim_err!("narrow [{}, {}) on axis {} of {:?}", start, start + len, axis, shape));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&self.data(input)[(o * shape[axis] + start) * inner..][..len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.record(&out_shape, out, Op::Narrow { input, axis, start }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.data(input).iter().copied().sum();
        self.record(&[1], vec![s], Op::Sum { input }, &[input])
    }

    /// Records an operation with a caller-supplied vector-Jacobian product.
    ///
    /// `backward` receives the output gradient and returns one gradient per
    /// input, each the length of that input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        backward: VjpFn<T>,
    ) -> Result<Var> {
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(value, Op::Custom { inputs: inputs.to_vec(), backward }, needs))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(dim_err!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        self.value(loss).check_finite("loss")?;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.node_backward(node, &g)?;
            for (v, delta) in contributions {
                if !self.needs(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, &d)| *a = *a + d),
                    slot @ None => *slot = Some(delta),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads, bindings: self.bindings.clone() })
    }

    fn node_backward(&self, node: &Node<T>, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, dims } => {
                let need = (self.needs(*input), self.needs(*weight), bias.is_some_and(|b| self.needs(b)));
                let r = kernels::conv2d_backward(dims, self.data(*input), self.data(*weight), g, need);
                out.extend(r.input.map(|d| (*input, d)));
                out.extend(r.weight.map(|d| (*weight, d)));
                if let (Some(b), Some(d)) = (bias, r.bias) {
                    out.push((*b, d));
                }
            }
            Op::AvgPool { input, dims } => out.push((*input, kernels::avg_pool_backward(dims, g))),
            Op::PadLast { input, left, right } => {
                let len = *self.shape(*input).last().unwrap();
                let padded = left + len + right;
                let d = g.chunks(padded).flat_map(|row| row[*left..*left + len].iter().copied()).collect();
                out.push((*input, d));
            }
            Op::Linear { input, weight, bias, rows, din, dout } => {
                let need = (self.needs(*input), self.needs(*weight), bias.is_some_and(|b| self.needs(b)));
                let r = kernels::linear_backward(self.data(*input), self.data(*weight), g, *rows, *din, *dout, need);
                out.extend(r.input.map(|d| (*input, d)));
                out.extend(r.weight.map(|d| (*weight, d)));
                if let (Some(b), Some(d)) = (bias, r.bias) {
                    out.push((*b, d));
                }
            }
            Op::Bmm { a, b, batch, m, k, n, trans_b } => {
                let need = (self.needs(*a), self.needs(*b));
                let (da, db) = kernels::bmm_backward(self.data(*a), self.data(*b), g, *batch, *m, *k, *n, *trans_b, need);
                out.extend(da.map(|d| (*a, d)));
                out.extend(db.map(|d| (*b, d)));
            }
            Op::BatchNorm { input, gamma, beta, mean, inv_std, batch_stats, dims } => {
                let r = kernels::bn_backward(
                    self.data(*input),
                    g,
                    self.data(*gamma),
                    mean,
                    inv_std,
                    dims.0,
                    dims.1,
                    dims.2,
                    *batch_stats,
                );
                out.push((*input, r.input));
                out.push((*gamma, r.gamma));
                out.push((*beta, r.beta));
            }
            Op::Elu { input } => {
                let d = self
                    .data(*input)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > T::zero() { gv } else { gv * x.exp() })
                    .collect();
                out.push((*input, d));
            }
            Op::MulConst { input, factor } => out.push((*input, g.iter().zip(factor).map(|(&a, &f)| a * f).collect())),
            Op::Scale { input, factor } => out.push((*input, g.iter().map(|&a| a * *factor).collect())),
            Op::ScaleBy { input, scalar } => {
                let s = self.data(*scalar)[0];
                out.push((*input, g.iter().map(|&a| a * s).collect()));
                let ds = g.iter().zip(self.data(*input)).map(|(&a, &x)| a * x).sum();
                out.push((*scalar, vec![ds]));
            }
            Op::Add { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Mul { a, b } => {
                out.push((*a, g.iter().zip(self.data(*b)).map(|(&x, &y)| x * y).collect()));
                out.push((*b, g.iter().zip(self.data(*a)).map(|(&x, &y)| x * y).collect()));
            }
            Op::Softmax { input, width } => {
                out.push((*input, kernels::softmax_backward(node.value.data(), g, *width)));
            }
            Op::CrossEntropy { logits, probs, targets, classes } => {
                let scale = g[0] / T::from_usize_lossy(targets.len());
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (row, &t) in targets.iter().enumerate() {
                    d[row * classes + t] = d[row * classes + t] - scale;
                }
                out.push((*logits, d));
            }
            Op::Reshape { input } => out.push((*input, g.to_vec())),
            Op::Permute { input, perm } => {
                let inv = kernels::inverse_perm(perm);
                out.push((*input, kernels::permute(g, node.value.shape(), &inv)));
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer = numel(&shape[..*axis]);
                let inner = numel(&shape[*axis + 1..]);
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.shape(v)[*axis] * inner;
                    let mut d = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        d.extend_from_slice(&g[o * shape[*axis] * inner + offset..][..chunk]);
                    }
                    offset += chunk;
                    out.push((v, d));
                }
            }
            Op::Narrow { input, axis, start } => {
                let in_shape = self.shape(*input);
                let outer = numel(&in_shape[..*axis]);
                let inner = numel(&in_shape[*axis + 1..]);
                let len = node.value.shape()[*axis];
                let mut d = vec![T::zero(); numel(in_shape)];
                for o in 0..outer {
                    d[(o * in_shape[*axis] + start) * inner..][..len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                out.push((*input, d));
            }
            Op::Sum { input } => out.push((*input, vec![g[0]; self.value(*input).len()])),
            Op::Custom { inputs, backward } => {
                let ds = backward(g);
                if ds.len() != inputs.len() {
                    return Err(Error::State(alloc::format!(
                        "custom backward returned {} gradients for {} inputs",
                        ds.len(),
                        inputs.len()
                    )));
                }
                for (&v, d) in inputs.iter().zip(ds) {
                    if d.len() != self.value(v).len() {
                        return Err(dim_err!("custom backward gradient length {} vs {}", d.len(), self.value(v).len()));
                    }
                    out.push((v, d));
                }
            }
        }
        Ok(out)
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    bindings: Vec<(Var, ParamId)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` is differentiable
    /// and the loss depends on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into its parameter's buffer. Parameters
    /// the loss does not depend on still get a (zero) buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for &(v, id) in &self.bindings {
            let p = store.get_mut(id);
            match self.get(v) {
                Some(g) => p.tensor.accumulate_grad(g)?,
                None => {
                    let zeros = vec![T::zero(); p.tensor.len()];
                    p.tensor.accumulate_grad(&zeros)?
                }
            }
        }
        Ok(())
    }
}
