//! Loss, optimiser and the early-stopping training loop.

use std::fmt::Write as _;

use crate::data::{augment, stack, AugmentConfig, Dataset};
use crate::error::{dim, invalid, Error, Result};
use crate::nn::{Model, ParamKind};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Tape, Tensor, Var};

use rand::seq::SliceRandom;

pub const PROB_FLOOR: f64 = 1e-12;
/// Validation loss must drop by more than this to count as an improvement.
pub const MIN_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub classes: usize,
    /// Textbook Adam with `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`. Off by default.
    pub bias_correction: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
            dropout: 0.5,
            patience: 10,
            max_epochs: 100,
            batch_size: 32,
            seed: 42,
            classes: 3,
            bias_correction: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(invalid(msg.to_string())) };
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning rate must be positive")?;
        check((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2 must lie in [0, 1)")?;
        check(self.epsilon > 0.0 && self.epsilon.is_finite(), "epsilon must be positive")?;
        check(self.weight_decay >= 0.0 && self.weight_decay.is_finite(), "weight decay must be non-negative")?;
        check((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)")?;
        check(self.patience >= 1, "patience must be at least 1")?;
        check(self.max_epochs >= 1, "max epochs must be at least 1")?;
        check(self.batch_size >= 1, "batch size must be at least 1")?;
        check(self.classes >= 2, "class count must be at least 2")
    }
}

/// Adam moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { v: m.clone(), m, t: 0 }
    }

    pub fn for_model(model: &Model<T>) -> Self {
        Self::new(model.parameters())
    }
}

/// One optimiser step. A missing gradient counts as zero.
///
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`, `θ ← θ − η·m/(√v + ε)`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Option<&Tensor<T>>],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(dim("adam_step", &[params.len(), grads.len()], &[state.m.len()]));
    }
    for (i, p) in params.iter().enumerate() {
        if let Some(g) = grads[i] {
            if g.shape() != p.shape() {
                return Err(dim("adam_step gradient", g.shape(), p.shape()));
            }
        }
        if state.m[i].shape() != p.shape() {
            return Err(dim("adam_step state", state.m[i].shape(), p.shape()));
        }
    }
    state.t += 1;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    // 1 − β in double precision: in f32 the subtraction cancels most digits of β₂.
    let (nb1, nb2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let (one, lr, eps) = (T::one(), T::of(cfg.learning_rate), T::of(cfg.epsilon));
    let (c1, c2) = if cfg.bias_correction {
        let t = state.t as i32;
        (T::of(1.0 - cfg.beta1.powi(t)), T::of(1.0 - cfg.beta2.powi(t)))
    } else {
        (one, one)
    };
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let theta = p.data_mut();
        for j in 0..theta.len() {
            let g = grads[i].map_or(T::zero(), |g| g.data()[j]);
            m[j] = b1 * m[j] + nb1 * g;
            v[j] = b2 * v[j] + nb2 * g * g;
            theta[j] = theta[j] - lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Inverse-frequency class weights `w_c = N / (C · N_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if counts.is_empty() || counts.contains(&0) {
            return Err(invalid(format!("every class needs training samples, counts {counts:?}")));
        }
        let c = counts.len() as f64;
        Ok(Self(counts.iter().map(|&n| total as f64 / (c * n as f64)).collect()))
    }

    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0; classes];
        for &l in labels {
            if l >= classes {
                return Err(invalid(format!("label {l} out of range for {classes} classes")));
            }
            counts[l] += 1;
        }
        Self::from_counts(&counts)
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `(1/N)·Σ w_{y_i}·(−log max(p_i[y_i], 1e-12))` recorded on the tape.
pub fn weighted_cross_entropy<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<Var> {
    let w: Vec<T> = weights.0.iter().map(|&x| T::of(x)).collect();
    tape.weighted_nll(probs, labels, &w, T::of(PROB_FLOOR))
}

/// The same loss taken from pre-softmax logits with a fused backward pass;
/// used by the training loop so a saturated softmax still receives gradient.
pub fn weighted_cross_entropy_logits<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<Var> {
    let w: Vec<T> = weights.0.iter().map(|&x| T::of(x)).collect();
    tape.weighted_softmax_ce(logits, labels, &w, T::of(PROB_FLOOR))
}

/// `λ·Σ‖θ‖²` over the given tensors.
pub fn l2_penalty<T: Scalar>(params: &[&Tensor<T>], lambda: f64) -> f64 {
    lambda
        * params
            .iter()
            .flat_map(|t| t.data())
            .map(|&v| v.as_f64() * v.as_f64())
            .sum::<f64>()
}

/// Tape version of [`l2_penalty`] restricted to weight-kind parameters.
pub fn l2_penalty_var<T: Scalar>(tape: &mut Tape<T>, params: &[Var], kinds: &[ParamKind], lambda: f64) -> Result<Option<Var>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (&p, &kind) in params.iter().zip(kinds) {
        if kind != ParamKind::Weight {
            continue;
        }
        let s = tape.sum_squares(p)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    total.map(|t| tape.scale(t, T::of(lambda))).transpose()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

pub const CURVE_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

impl TrainingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CURVE_HEADER) {
            return Err(invalid("curve file must start with the standard header"));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                let bad = || invalid(format!("malformed curve row `{line}`"));
                if f.len() != 5 {
                    return Err(bad());
                }
                let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
                Ok(EpochRecord {
                    epoch: f[0].trim().parse().map_err(|_| bad())?,
                    train_loss: num(f[1])?,
                    train_acc: num(f[2])?,
                    val_loss: num(f[3])?,
                    val_acc: num(f[4])?,
                })
            })
            .collect()
    }

    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Something the early-stopping loop can drive.
pub trait Learner {
    type Snapshot;

    /// Trains for one epoch (0-based index) and returns its loss and accuracy.
    fn train_epoch(&mut self, epoch: usize) -> Result<EpochStats>;
    fn validate(&mut self) -> Result<EpochStats>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

/// Runs epochs until `max_epochs` or until `patience` consecutive epochs fail
/// to improve the validation loss by more than [`MIN_DELTA`], then restores
/// the best epoch's state.
pub fn run_epochs<L: Learner>(
    learner: &mut L,
    max_epochs: usize,
    patience: usize,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainingReport> {
    if max_epochs == 0 || patience == 0 {
        return Err(invalid("max epochs and patience must be at least 1"));
    }
    let mut report = TrainingReport {
        best_val_loss: f64::INFINITY,
        ..TrainingReport::default()
    };
    let mut best = None;
    let mut stale = 0;
    for epoch in 0..max_epochs {
        let train = learner.train_epoch(epoch)?;
        let val = learner.validate()?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: train.loss,
            train_acc: train.accuracy,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        observer(&record);
        report.epochs.push(record);
        if val.loss < report.best_val_loss - MIN_DELTA {
            report.best_val_loss = val.loss;
            report.best_epoch = epoch + 1;
            best = Some(learner.snapshot());
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                report.stopped_early = epoch + 1 < max_epochs;
                break;
            }
        }
    }
    match best {
        Some(s) => learner.restore(s),
        None => return Err(Error::NonFinite("validation loss")),
    }
    Ok(report)
}

/// Evaluation-mode class probabilities for every sample, in dataset order.
pub fn predict_dataset(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let classes = model.spec.classes;
    let mut out = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = data.batch::<f32>(chunk)?;
        let probs = model.predict(&x)?;
        out.extend(probs.data().chunks(classes).map(|r| r.iter().map(|&p| p as f64).collect()));
    }
    Ok(out)
}

/// Mean weighted cross-entropy and accuracy of a set of probability rows.
pub fn score_predictions(probs: &[Vec<f64>], labels: &[usize], weights: &ClassWeights) -> Result<EpochStats> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(invalid("predictions and labels must be non-empty and of equal length"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (row, &y) in probs.iter().zip(labels) {
        let w = *weights
            .as_slice()
            .get(y)
            .ok_or_else(|| invalid(format!("label {y} out of range")))?;
        loss += w * -row[y].max(PROB_FLOOR).ln();
        correct += usize::from(argmax(row) == y);
    }
    Ok(EpochStats {
        loss: loss / labels.len() as f64,
        accuracy: correct as f64 / labels.len() as f64,
    })
}

/// Drives a [`Model`] with Adam over augmented, shuffled mini-batches.
pub struct ModelLearner<'a> {
    pub model: &'a mut Model<f32>,
    pub adam: AdamState<f32>,
    train: &'a Dataset,
    val: &'a Dataset,
    cfg: &'a TrainConfig,
    augment: &'a AugmentConfig,
    weights: ClassWeights,
    kinds: Vec<ParamKind>,
}

impl<'a> ModelLearner<'a> {
    pub fn new(
        model: &'a mut Model<f32>,
        train: &'a Dataset,
        val: &'a Dataset,
        cfg: &'a TrainConfig,
        augment: &'a AugmentConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        augment.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(invalid("training and validation splits must both be non-empty"));
        }
        if model.spec.classes != cfg.classes || train.classes() != cfg.classes {
            return Err(invalid(format!(
                "class count mismatch: model {}, data {}, config {}",
                model.spec.classes,
                train.classes(),
                cfg.classes
            )));
        }
        let weights = ClassWeights::from_labels(&train.labels(), cfg.classes)?;
        Ok(Self {
            adam: AdamState::for_model(model),
            kinds: model.parameter_kinds(),
            model,
            train,
            val,
            cfg,
            augment,
            weights,
        })
    }

    pub fn class_weights(&self) -> &ClassWeights {
        &self.weights
    }

    fn step(&mut self, epoch: usize, batch_index: usize, indices: &[usize]) -> Result<(f64, usize)> {
        let samples: Vec<_> = indices
            .iter()
            .map(|&i| {
                let s = &self.train.samples[i];
                let mut rng = stream_rng(self.cfg.seed, Stream::Augment, epoch as u64, i as u64);
                augment(s, self.augment, &mut rng)
            })
            .collect();
        let (x, labels) = stack::<f32>(samples.iter(), self.train.side)?;
        let mut tape = Tape::new();
        let input = tape.constant(x);
        let mut rng = stream_rng(self.cfg.seed, Stream::Dropout, epoch as u64, batch_index as u64);
        let fwd = self.model.forward_train(&mut tape, input, &mut rng)?;
        let data_loss = weighted_cross_entropy_logits(&mut tape, fwd.logits, &labels, &self.weights)?;
        let loss = match l2_penalty_var(&mut tape, &fwd.params, &self.kinds, self.cfg.weight_decay)? {
            Some(l2) => tape.add(data_loss, l2)?,
            None => data_loss,
        };
        tape.backward(loss)?;
        let probs = tape.value(fwd.probs);
        let correct = probs
            .data()
            .chunks(self.cfg.classes)
            .zip(&labels)
            .filter(|(row, &y)| argmax(&row.iter().map(|&p| p as f64).collect::<Vec<_>>()) == y)
            .count();
        let batch_loss = tape.value(data_loss).item() as f64;
        let grads: Vec<Option<&Tensor<f32>>> = fwd.params.iter().map(|&p| tape.grad(p)).collect();
        let mut params = self.model.parameters_mut();
        adam_step(&mut params, &grads, &mut self.adam, self.cfg)?;
        Ok((batch_loss * indices.len() as f64, correct))
    }
}

impl Learner for ModelLearner<'_> {
    type Snapshot = (Model<f32>, AdamState<f32>);

    fn train_epoch(&mut self, epoch: usize) -> Result<EpochStats> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut stream_rng(self.cfg.seed, Stream::Shuffle, epoch as u64, 0));
        let mut loss = 0.0;
        let mut correct = 0;
        let batches: Vec<Vec<usize>> = order.chunks(self.cfg.batch_size).map(<[usize]>::to_vec).collect();
        for (b, batch) in batches.iter().enumerate() {
            let (l, c) = self.step(epoch, b, batch)?;
            loss += l;
            correct += c;
        }
        let n = self.train.len() as f64;
        Ok(EpochStats {
            loss: loss / n,
            accuracy: correct as f64 / n,
        })
    }

    fn validate(&mut self) -> Result<EpochStats> {
        let probs = predict_dataset(self.model, self.val, self.cfg.batch_size.max(64))?;
        score_predictions(&probs, &self.val.labels(), &self.weights)
    }

    fn snapshot(&self) -> Self::Snapshot {
        (self.model.clone(), self.adam.clone())
    }

    fn restore(&mut self, (model, adam): Self::Snapshot) {
        *self.model = model;
        self.adam = adam;
    }
}

/// Outcome of [`train_loop`]: the report plus the optimiser state belonging
/// to the restored parameters.
pub struct TrainOutcome {
    pub report: TrainingReport,
    pub adam: AdamState<f32>,
}

pub fn train_loop(
    model: &mut Model<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
) -> Result<TrainOutcome> {
    train_loop_with(model, train, val, cfg, augment, &mut |_| {})
}

pub fn train_loop_with(
    model: &mut Model<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let mut learner = ModelLearner::new(model, train, val, cfg, augment)?;
    let report = run_epochs(&mut learner, cfg.max_epochs, cfg.patience, observer)?;
    Ok(TrainOutcome {
        report,
        adam: learner.adam,
    })
}
