//! Chebyshev convolution layer and the classifier network built from it.
//!
//! A Chebyshev convolution squashes its input into `(-1, 1)` with `tanh`,
//! expands it elementwise into `T_0(s) ..= T_K(s)` with the three-term
//! recurrence, and sums one learned 3×3 convolution per polynomial order:
//!
//! ```text
//! out = Σ_{k=0}^{K} W_k * T_k(tanh(in)) + bias
//! ```
//!
//! The branches are stacked along the channel axis so the whole layer is a
//! single convolution over `(K + 1)·C` input channels.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim, invalid, Result};
use crate::tensor::{BatchStats, Scalar, Tape, Tensor, Var};

pub const KERNEL: usize = 3;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// One stage of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    ChebConv { out_channels: usize, order: usize },
    Conv { out_channels: usize },
    BatchNorm,
    Relu,
    MaxPool,
    Flatten,
    Dense { out_features: usize },
    Dropout { p: f64 },
    Softmax,
}

/// Knobs of the default two-block classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub conv1_filters: usize,
    pub conv1_order: usize,
    pub conv2_filters: usize,
    pub conv2_order: usize,
    pub dense_width: usize,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv1_filters: 32,
            conv1_order: 4,
            conv2_filters: 64,
            conv2_order: 6,
            dense_width: 256,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub side: usize,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::cheb_cnn(128, 3, &ArchConfig::default())
    }
}

impl NetworkSpec {
    /// ChebConv → BN → ReLU → MaxPool, twice, then Flatten → Dense → Dropout
    /// → Dense(classes) → Softmax.
    pub fn cheb_cnn(side: usize, classes: usize, arch: &ArchConfig) -> Self {
        let layers = vec![
            LayerSpec::ChebConv {
                out_channels: arch.conv1_filters,
                order: arch.conv1_order,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::ChebConv {
                out_channels: arch.conv2_filters,
                order: arch.conv2_order,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                out_features: arch.dense_width,
            },
            LayerSpec::Dropout { p: arch.dropout },
            LayerSpec::Dense { out_features: classes },
            LayerSpec::Softmax,
        ];
        Self {
            in_channels: 1,
            side,
            classes,
            layers,
        }
    }

    /// The same stack with every Chebyshev convolution replaced by a plain
    /// single-branch 3×3 convolution of equal width.
    pub fn standard_conv(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::ChebConv { out_channels, .. } => LayerSpec::Conv {
                    out_channels: *out_channels,
                },
                other => other.clone(),
            })
            .collect();
        Self {
            layers,
            ..self.clone()
        }
    }

    /// Per-layer output shapes (without the batch axis) for a valid spec.
    pub fn shape_ledger(&self) -> Result<Vec<Vec<usize>>> {
        if self.in_channels == 0 || self.side == 0 || self.classes < 2 {
            return Err(invalid(format!(
                "network needs positive channels/side and at least 2 classes (got {}, {}, {})",
                self.in_channels, self.side, self.classes
            )));
        }
        let pools = self.layers.iter().filter(|l| matches!(l, LayerSpec::MaxPool)).count();
        let divisor = 1usize << pools;
        if !self.side.is_multiple_of(divisor) {
            return Err(invalid(format!(
                "input side {} must be divisible by {divisor} ({pools} 2x2 pools)",
                self.side
            )));
        }
        let mut shape = vec![self.in_channels, self.side, self.side];
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match layer {
                LayerSpec::ChebConv { out_channels, .. } | LayerSpec::Conv { out_channels } => {
                    if shape.len() != 3 || *out_channels == 0 {
                        return Err(invalid(format!("layer {i}: convolution needs a CHW input")));
                    }
                    vec![*out_channels, shape[1], shape[2]]
                }
                LayerSpec::BatchNorm | LayerSpec::MaxPool if shape.len() != 3 => {
                    return Err(invalid(format!("layer {i}: {layer:?} needs a CHW input")));
                }
                LayerSpec::MaxPool => vec![shape[0], shape[1] / 2, shape[2] / 2],
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Dense { out_features } => {
                    if shape.len() != 1 || *out_features == 0 {
                        return Err(invalid(format!("layer {i}: dense needs a flat input")));
                    }
                    vec![*out_features]
                }
                LayerSpec::Dropout { p } if !(0.0..1.0).contains(p) => {
                    return Err(invalid(format!("layer {i}: dropout p must lie in [0, 1), got {p}")));
                }
                LayerSpec::BatchNorm | LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Softmax => shape,
            };
            out.push(shape.clone());
        }
        match (self.layers.last(), out.last()) {
            (Some(LayerSpec::Softmax), Some(s)) if s == &vec![self.classes] => Ok(out),
            _ => Err(invalid(format!(
                "network must end in Dense({}) followed by Softmax",
                self.classes
            ))),
        }
    }

    /// Width of the vector entering the first dense layer.
    pub fn flatten_width(&self) -> Result<usize> {
        let ledger = self.shape_ledger()?;
        self.layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Flatten))
            .map(|i| ledger[i][0])
            .ok_or_else(|| invalid("network has no flatten stage"))
    }
}

/// Shape of one Chebyshev convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChebConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub order: usize,
}

impl ChebConvSpec {
    pub fn parameter_count(&self) -> usize {
        (self.order + 1) * self.out_channels * self.in_channels * KERNEL * KERNEL + self.out_channels
    }
}

/// Map applied before the polynomial expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Squash {
    #[default]
    Tanh,
    /// Test hook: feed the raw input to the recurrence.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChebConv<T> {
    pub spec: ChebConvSpec,
    /// `order + 1` tensors of shape `[out, in, 3, 3]`, one per `T_k`.
    pub weights: Vec<Tensor<T>>,
    pub bias: Tensor<T>,
    pub squash: Squash,
}

impl<T: Scalar> ChebConv<T> {
    pub fn zeros(spec: ChebConvSpec) -> Self {
        let w = [spec.out_channels, spec.in_channels, KERNEL, KERNEL];
        Self {
            spec,
            weights: (0..=spec.order).map(|_| Tensor::zeros(&w)).collect(),
            bias: Tensor::zeros(&[spec.out_channels]),
            squash: Squash::Tanh,
        }
    }

    fn init(spec: ChebConvSpec, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeros(spec);
        let fan_in = (spec.order + 1) * spec.in_channels * KERNEL * KERNEL;
        for w in &mut layer.weights {
            he_fill(w, fan_in, rng);
        }
        layer
    }

    /// Records the layer on `tape`. `weights` and `bias` are the tape handles
    /// of this layer's parameters.
    pub fn forward(&self, tape: &mut Tape<T>, input: Var, weights: &[Var], bias: Var) -> Result<Var> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(dim("cheb_conv", &shape, &[self.spec.in_channels]));
        }
        let s = match self.squash {
            Squash::Tanh => tape.tanh(input)?,
            Squash::Identity => input,
        };
        let mut basis = vec![tape.constant(Tensor::ones(&shape))];
        if self.spec.order >= 1 {
            basis.push(s);
        }
        for k in 1..self.spec.order {
            let prod = tape.mul(s, basis[k])?;
            let twice = tape.scale(prod, T::of(2.0))?;
            basis.push(tape.sub(twice, basis[k - 1])?);
        }
        let stacked = tape.concat(&basis, 1)?;
        let kernel = tape.concat(weights, 1)?;
        tape.conv2d(stacked, kernel, Some(bias))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
        }
    }

    /// Exponential running average; variance is stored unbiased.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        let unbias = if stats.count > 1 {
            T::of(stats.count as f64 / (stats.count - 1) as f64)
        } else {
            T::one()
        };
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * *b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * *b * unbias;
        }
    }
}

/// Fully connected layer; `weight` is `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    ChebConv(ChebConv<T>),
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu,
    MaxPool,
    Flatten,
    Dense(Dense<T>),
    Dropout(f64),
    Softmax,
}

/// Whether a parameter is subject to weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Affine,
}

fn he_fill<T: Scalar>(t: &mut Tensor<T>, fan_in: usize, rng: &mut impl Rng) {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    for v in t.data_mut() {
        *v = T::of(normal.sample(rng));
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    pub probs: Var,
    /// Parameter handles in [`Model::parameters`] order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Model<T> {
    /// He-normal convolution and dense weights, zero biases, unit batch-norm
    /// scale. Deterministic in `seed`.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let ledger = spec.shape_ledger()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels = spec.in_channels;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let input_width = if i == 0 {
                spec.in_channels * spec.side * spec.side
            } else {
                ledger[i - 1].iter().product()
            };
            let layer = match l {
                LayerSpec::ChebConv { out_channels, order } => {
                    let cc = ChebConv::init(
                        ChebConvSpec {
                            in_channels: channels,
                            out_channels: *out_channels,
                            order: *order,
                        },
                        &mut rng,
                    );
                    channels = *out_channels;
                    Layer::ChebConv(cc)
                }
                LayerSpec::Conv { out_channels } => {
                    let mut weight = Tensor::zeros(&[*out_channels, channels, KERNEL, KERNEL]);
                    he_fill(&mut weight, channels * KERNEL * KERNEL, &mut rng);
                    channels = *out_channels;
                    Layer::Conv(Conv2d {
                        weight,
                        bias: Tensor::zeros(&[*out_channels]),
                    })
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm2d::new(channels)),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool => Layer::MaxPool,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense { out_features } => {
                    let mut weight = Tensor::zeros(&[input_width, *out_features]);
                    he_fill(&mut weight, input_width, &mut rng);
                    Layer::Dense(Dense {
                        weight,
                        bias: Tensor::zeros(&[*out_features]),
                    })
                }
                LayerSpec::Dropout { p } => Layer::Dropout(*p),
                LayerSpec::Softmax => Layer::Softmax,
            };
            layers.push(layer);
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Learnable tensors in a fixed order.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::ChebConv(c) => {
                    out.extend(c.weights.iter());
                    out.push(&c.bias);
                }
                Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
                Layer::BatchNorm(b) => out.extend([&b.gamma, &b.beta]),
                Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::ChebConv(c) => {
                    out.extend(c.weights.iter_mut());
                    out.push(&mut c.bias);
                }
                Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::BatchNorm(b) => out.extend([&mut b.gamma, &mut b.beta]),
                Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn parameter_kinds(&self) -> Vec<ParamKind> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::ChebConv(c) => {
                    out.extend(c.weights.iter().map(|_| ParamKind::Weight));
                    out.push(ParamKind::Bias);
                }
                Layer::Conv(_) | Layer::Dense(_) => out.extend([ParamKind::Weight, ParamKind::Bias]),
                Layer::BatchNorm(_) => out.extend([ParamKind::Affine, ParamKind::Affine]),
                _ => {}
            }
        }
        out
    }

    /// Non-learned state: batch-norm running means and variances.
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some([&b.running_mean, &b.running_var]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some([&mut b.running_mean, &mut b.running_var]),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let expect = [self.spec.in_channels, self.spec.side, self.spec.side];
        if shape.len() != 4 || shape[1..] != expect {
            return Err(dim("forward input", shape, &expect));
        }
        Ok(())
    }

    fn run(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        training: bool,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Forward, Vec<(usize, BatchStats<T>)>)> {
        self.check_input(tape.shape(input))?;
        let params: Vec<Var> = self.parameters().into_iter().map(|p| tape.param(p.clone())).collect();
        let mut next = params.iter().copied();
        let mut take = |n: usize| -> Vec<Var> { next.by_ref().take(n).collect() };
        let eps = T::of(BN_EPS);
        let mut stats = Vec::new();
        let mut x = input;
        let mut logits = None;
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                Layer::ChebConv(c) => {
                    let p = take(c.weights.len() + 1);
                    c.forward(tape, x, &p[..c.weights.len()], p[c.weights.len()])?
                }
                Layer::Conv(_) => {
                    let p = take(2);
                    tape.conv2d(x, p[0], Some(p[1]))?
                }
                Layer::BatchNorm(b) => {
                    let p = take(2);
                    if training {
                        let (y, s) = tape.batch_norm_train(x, p[0], p[1], eps)?;
                        stats.push((i, s));
                        y
                    } else {
                        tape.batch_norm_eval(x, p[0], p[1], b.running_mean.data(), b.running_var.data(), eps)?
                    }
                }
                Layer::Relu => tape.relu(x)?,
                Layer::MaxPool => tape.maxpool2x2(x)?,
                Layer::Flatten => tape.flatten(x)?,
                Layer::Dense(_) => {
                    let p = take(2);
                    let y = tape.matmul(x, p[0])?;
                    tape.add_bias(y, p[1])?
                }
                Layer::Dropout(p) => match (training, rng.as_deref_mut()) {
                    (true, Some(r)) => tape.dropout(x, *p, true, r)?,
                    (true, None) => return Err(invalid("training forward needs an rng")),
                    (false, _) => x,
                },
                Layer::Softmax => {
                    logits = Some(x);
                    tape.softmax_rows(x)?
                }
            };
        }
        let logits = logits.ok_or_else(|| invalid("network has no softmax stage"))?;
        Ok((
            Forward {
                logits,
                probs: x,
                params,
            },
            stats,
        ))
    }

    /// Training-mode forward: batch statistics, live dropout, running-stat
    /// updates.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, input: Var, rng: &mut dyn RngCore) -> Result<Forward> {
        let (fwd, stats) = self.run(tape, input, true, Some(rng))?;
        for (i, s) in stats {
            if let Layer::BatchNorm(b) = &mut self.layers[i] {
                b.update_running(&s);
            }
        }
        Ok(fwd)
    }

    /// Evaluation-mode forward: running statistics, dropout disabled.
    pub fn forward_eval(&self, tape: &mut Tape<T>, input: Var) -> Result<Forward> {
        Ok(self.run(tape, input, false, None)?.0)
    }

    /// Class probabilities `[N, classes]` in evaluation mode.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let fwd = self.forward_eval(&mut tape, x)?;
        Ok(tape.value(fwd.probs).clone())
    }

    /// Copies every parameter and buffer from `other`, which must have the same `NetworkSpec`.
    pub fn load_state(&mut self, other: &Model<T>) -> Result<()> {
        if self.spec != other.spec {
            return Err(invalid("cannot load state from a model with a different spec"));
        }
        self.layers = other.layers.clone();
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::ChebConv(c) => Layer::ChebConv(ChebConv {
                    spec: c.spec,
                    weights: c.weights.iter().map(Tensor::cast).collect(),
                    bias: c.bias.cast(),
                    squash: c.squash,
                }),
                Layer::Conv(c) => Layer::Conv(Conv2d {
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm2d {
                    gamma: b.gamma.cast(),
                    beta: b.beta.cast(),
                    running_mean: b.running_mean.cast(),
                    running_var: b.running_var.cast(),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool => Layer::MaxPool,
                Layer::Flatten => Layer::Flatten,
                Layer::Dense(d) => Layer::Dense(Dense {
                    weight: d.weight.cast(),
                    bias: d.bias.cast(),
                }),
                Layer::Dropout(p) => Layer::Dropout(*p),
                Layer::Softmax => Layer::Softmax,
            })
            .collect();
        Model {
            spec: self.spec.clone(),
            layers,
        }
    }
}
