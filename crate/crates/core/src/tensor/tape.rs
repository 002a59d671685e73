//! Reverse-mode tape.
//!
//! Every operation appends a node holding its output value and whatever
//! intermediates its backward rule needs. Nodes are pushed in evaluation
//! order, so iterating the node list backwards is a reverse topological
//! traversal that visits each node once.

use rand::Rng;

use super::kernels::{conv2d_backward, conv2d_forward, ConvGeom};
use super::gemm::gemm;
use super::{Scalar, Tensor};
use crate::error::{dim, invalid, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel statistics measured by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Tanh(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    SoftmaxRows(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Sum(Var),
    SumSquares(Var),
    WeightedNll {
        probs: Var,
        labels: Vec<usize>,
        weights: Vec<T>,
        floor: T,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
        weights: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for later differentiation.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, op: &'static str, value: Tensor<T>, kind: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        kind: Op<T>,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape(), data)?
        } else if tb.numel() == 1 {
            let y = tb.item();
            ta.map(|x| f(x, y))
        } else if ta.numel() == 1 {
            let x = ta.item();
            tb.map(|y| f(x, y))
        } else {
            return Err(dim(name, ta.shape(), tb.shape()));
        };
        self.push(name, out, kind, &[a, b])
    }

    /// Elementwise sum; either side may be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push("scale", out, Op::Scale(a, c), &[a])
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, T::zero(), &mut out);
        let out = Tensor::new(&[m, n], out)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a length-`F` bias to every row of an `[N, F]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(dim("add_bias", &sx, &sb));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(sx[1]) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += *bv;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// `[N, ...] → [N, product(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s[0];
        let rest: usize = s[1..].iter().product();
        self.reshape(x, &[n, rest.max(1)])
    }

    /// Same-padded stride-1 cross-correlation. `input` is `[N, C, H, W]`,
    /// `weight` is `[O, C, k, k]` with odd `k`, `bias` is `[O]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(dim("conv2d", &si, &sw));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(dim("conv2d bias", self.shape(b), &[sw[0]]));
            }
        }
        let geom = ConvGeom {
            n: si[0],
            c: si[1],
            h: si[2],
            w: si[3],
            o: sw[0],
            k: sw[2],
        };
        let out = conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            geom,
        );
        let out = Tensor::new(&[geom.n, geom.o, geom.h, geom.w], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &inputs,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.tanh());
        self.push("tanh", out, Op::Tanh(x), &[x])
    }

    /// 2×2 max pooling with stride 2 over `[N, C, H, W]`; `H` and `W` must be even.
    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(dim("maxpool2x2", &s, &[2, 2]));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(nc * oh * ow);
        let mut argmax = Vec::with_capacity(nc * oh * ow);
        for p in 0..nc {
            let base = p * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let i0 = base + 2 * y * w + 2 * xx;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(&[s[0], s[1], oh, ow], out)?;
        self.push("maxpool2x2", out, Op::MaxPool2 { input: x, argmax }, &[x])
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(dim("batch_norm", s, &[0, 0, 0, 0]));
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(dim("batch_norm affine", self.shape(gamma), &[c]));
        }
        Ok((s[0], c, s[2] * s[3]))
    }

    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
        batch_stats: bool,
    ) -> Result<Var> {
        let (n, c, hw) = self.check_bn(x, gamma, beta)?;
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let src = self.value(x);
        let mut xhat = Vec::with_capacity(src.numel());
        let mut out = Vec::with_capacity(src.numel());
        for ni in 0..n {
            for ch in 0..c {
                let plane = &src.data()[(ni * c + ch) * hw..(ni * c + ch + 1) * hw];
                for &v in plane {
                    let xh = (v - mean[ch]) * inv_std[ch];
                    xhat.push(xh);
                    out.push(g[ch] * xh + b[ch]);
                }
            }
        }
        let out = Tensor::new(src.shape(), out)?;
        self.push(
            "batch_norm",
            out,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
        )
    }

    /// Per-channel standardisation with batch statistics (training mode).
    /// Returns the measured statistics so the caller can update running
    /// averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (n, c, hw) = self.check_bn(x, gamma, beta)?;
        let count = n * hw;
        let data = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for ni in 0..n {
                s += data[(ni * c + ch) * hw..(ni * c + ch + 1) * hw].iter().copied().sum::<T>();
            }
            let m = s / T::of(count as f64);
            let mut ss = T::zero();
            for ni in 0..n {
                for &v in &data[(ni * c + ch) * hw..(ni * c + ch + 1) * hw] {
                    ss += (v - m) * (v - m);
                }
            }
            mean[ch] = m;
            var[ch] = ss / T::of(count as f64);
        }
        let out = self.bn_apply(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, BatchStats { mean, var, count }))
    }

    /// Per-channel affine normalisation with fixed statistics (evaluation mode).
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        self.bn_apply(x, gamma, beta, mean, var, eps, false)
    }

    /// Inverted dropout. In evaluation mode this returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid(format!("dropout probability must lie in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() >= p { keep } else { T::zero() })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(src.shape(), data)?;
        self.push("dropout", out, Op::Dropout { input: x, mask }, &[x])
    }

    /// Row-wise softmax of an `[N, C]` matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(dim("softmax_rows", &s, &[0, 0]));
        }
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(s[1]) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        self.push("softmax_rows", out, Op::SoftmaxRows(x), &[x])
    }

    /// Concatenates tensors that agree on every axis except `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| invalid("concat needs at least one input"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(dim("concat axis", &base, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(dim("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        self.push(
            "concat",
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `Σ x²`.
    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|&v| v * v).sum::<T>();
        self.push("sum_squares", Tensor::scalar(s), Op::SumSquares(x), &[x])
    }

    /// Mean over rows of `w[label] · (−ln max(p[label], floor))` for an
    /// `[N, C]` probability matrix.
    pub fn weighted_nll(&mut self, probs: Var, labels: &[usize], weights: &[T], floor: T) -> Result<Var> {
        let s = self.check_nll("weighted_nll", probs, labels, weights)?;
        let p = self.value(probs).data();
        let mut total = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            total += weights[l] * -(p[i * s[1] + l].max(floor)).ln();
        }
        let loss = total / T::of(labels.len() as f64);
        self.push(
            "weighted_nll",
            Tensor::scalar(loss),
            Op::WeightedNll {
                probs,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                floor,
            },
            &[probs],
        )
    }

    fn check_nll(&self, op: &'static str, x: Var, labels: &[usize], weights: &[T]) -> Result<Vec<usize>> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(dim(op, &s, &[labels.len()]));
        }
        if weights.len() != s[1] {
            return Err(dim(op, &s, &[weights.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
            return Err(invalid(format!("label {bad} out of range for {} classes", s[1])));
        }
        Ok(s)
    }

    /// Fused softmax and [`weighted_nll`](Self::weighted_nll) on `[N, C]`
    /// logits. The value is the same floored loss, computed through a stable
    /// log-softmax; the gradient is the analytic `w·(p − onehot)/N`, which
    /// stays informative even where `p[label]` underflows the floor.
    pub fn weighted_softmax_ce(&mut self, logits: Var, labels: &[usize], weights: &[T], floor: T) -> Result<Var> {
        let s = self.check_nll("weighted_softmax_ce", logits, labels, weights)?;
        let z = self.value(logits).data();
        let mut probs = Vec::with_capacity(z.len());
        let mut total = T::zero();
        let log_floor = floor.ln();
        for (row, &l) in z.chunks(s[1]).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = sum.ln();
            probs.extend(row.iter().map(|&v| (v - max).exp() / sum));
            total += weights[l] * -(row[l] - max - lse).max(log_floor);
        }
        let loss = total / T::of(labels.len() as f64);
        self.push(
            "weighted_softmax_ce",
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            &[logits],
        )
    }

    /// Populates gradients of the scalar `loss` for every node that requires
    /// them. Calling it again without [`reset_grads`](Self::reset_grads) is
    /// an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if self.backward_done {
            return Err(Error::GradientsAccumulated);
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(Tensor::new(&shape, delta).expect("gradient matches value shape"));
            }
        }
    }

    fn broadcast_grad(&self, target: Var, full: Vec<T>) -> Vec<T> {
        if self.value(target).numel() == 1 && full.len() != 1 {
            vec![full.into_iter().sum()]
        } else {
            full
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor<T>) {
        let gd = g.data();
        // Take the op out so its saved buffers can be read while grads are
        // written; it is put back at the end.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -T::one() } else { T::one() };
                if self.needs(*a) {
                    let d = self.broadcast_grad(*a, gd.to_vec());
                    self.accumulate(*a, d);
                }
                if self.needs(*b) {
                    let d = self.broadcast_grad(*b, gd.iter().map(|&v| v * sign).collect());
                    self.accumulate(*b, d);
                }
            }
            Op::Mul(a, b) => {
                for (me, other) in [(*a, *b), (*b, *a)] {
                    if !self.needs(me) {
                        continue;
                    }
                    let o = self.value(other).data();
                    let full: Vec<T> = if o.len() == 1 {
                        gd.iter().map(|&v| v * o[0]).collect()
                    } else {
                        gd.iter().zip(o).map(|(&v, &w)| v * w).collect()
                    };
                    let d = self.broadcast_grad(me, full);
                    self.accumulate(me, d);
                }
            }
            Op::Scale(a, c) => {
                let d = gd.iter().map(|&v| v * *c).collect();
                self.accumulate(*a, d);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, T::zero(), &mut da);
                    self.accumulate(*a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, T::zero(), &mut db);
                    self.accumulate(*b, db);
                }
            }
            Op::AddBias(x, bias) => {
                let f = self.shape(*bias)[0];
                if self.needs(*bias) {
                    let mut db = vec![T::zero(); f];
                    for row in gd.chunks(f) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(*bias, db);
                }
                self.accumulate(*x, gd.to_vec());
            }
            Op::Reshape(x) => self.accumulate(*x, gd.to_vec()),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let grads = conv2d_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    gd,
                    *geom,
                    self.needs(*input),
                    self.needs(*weight),
                );
                if let Some(dx) = grads.input {
                    self.accumulate(*input, dx);
                }
                if let Some(dw) = grads.weight {
                    self.accumulate(*weight, dw);
                }
                if let Some(b) = bias {
                    self.accumulate(*b, grads.bias);
                }
            }
            Op::Relu(x) => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(*x, d);
            }
            Op::Tanh(x) => {
                let y = self.nodes[i].value.data();
                let d = y.iter().zip(gd).map(|(&t, &gv)| gv * (T::one() - t * t)).collect();
                self.accumulate(*x, d);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut d = vec![T::zero(); self.value(*input).numel()];
                for (&idx, &gv) in argmax.iter().zip(gd) {
                    d[idx] += gv;
                }
                self.accumulate(*input, d);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = self.shape(*input).to_vec();
                let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for ni in 0..n {
                    for ch in 0..c {
                        let r = (ni * c + ch) * hw..(ni * c + ch + 1) * hw;
                        for (&gv, &xh) in gd[r.clone()].iter().zip(&xhat[r]) {
                            sum_g[ch] += gv;
                            sum_gx[ch] += gv * xh;
                        }
                    }
                }
                if self.needs(*input) {
                    let gam = self.value(*gamma).data().to_vec();
                    let m = T::of((n * hw) as f64);
                    let mut dx = vec![T::zero(); gd.len()];
                    for ni in 0..n {
                        for ch in 0..c {
                            let r = (ni * c + ch) * hw..(ni * c + ch + 1) * hw;
                            let k = gam[ch] * inv_std[ch];
                            for ((d, &gv), &xh) in dx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r]) {
                                *d = if *batch_stats {
                                    k * (gv - sum_g[ch] / m - xh * sum_gx[ch] / m)
                                } else {
                                    k * gv
                                };
                            }
                        }
                    }
                    self.accumulate(*input, dx);
                }
                self.accumulate(*gamma, sum_gx);
                self.accumulate(*beta, sum_g);
            }
            Op::Dropout { input, mask } => {
                let d = gd.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                self.accumulate(*input, d);
            }
            Op::SoftmaxRows(x) => {
                let y = self.nodes[i].value.data();
                let c = self.shape(*x)[1];
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(c).zip(gd.chunks(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                self.accumulate(*x, d);
            }
            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis] * inner;
                    if self.needs(*v) {
                        let mut d = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            d.extend_from_slice(&gd[o * total + offset..o * total + offset + len]);
                        }
                        self.accumulate(*v, d);
                    }
                    offset += len;
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(*x, vec![gd[0]; n]);
            }
            Op::SumSquares(x) => {
                let two = T::of(2.0);
                let d = self.value(*x).data().iter().map(|&v| two * v * gd[0]).collect();
                self.accumulate(*x, d);
            }
            Op::WeightedNll {
                probs,
                labels,
                weights,
                floor,
            } => {
                let s = self.shape(*probs).to_vec();
                let p = self.value(*probs).data();
                let inv_n = T::one() / T::of(labels.len() as f64);
                let mut d = vec![T::zero(); p.len()];
                for (row, &l) in labels.iter().enumerate() {
                    let idx = row * s[1] + l;
                    if p[idx] > *floor {
                        d[idx] = -gd[0] * weights[l] * inv_n / p[idx];
                    }
                }
                self.accumulate(*probs, d);
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
                weights,
            } => {
                let c = self.shape(*logits)[1];
                let inv_n = T::one() / T::of(labels.len() as f64);
                let mut d = Vec::with_capacity(probs.len());
                for (row, &l) in probs.chunks(c).zip(labels) {
                    let scale = gd[0] * weights[l] * inv_n;
                    d.extend(row.iter().enumerate().map(|(j, &p)| {
                        let y = if j == l { T::one() } else { T::zero() };
                        scale * (p - y)
                    }));
                }
                self.accumulate(*logits, d);
            }
        }
        self.nodes[i].op = op;
    }
}
