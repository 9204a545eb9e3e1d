//! Losses, optimizer and the mini-batch training loop.

use crate::data::{center_crop, random_crop, LabeledSet};
use crate::error::{err_fmt, Error, Result};
use crate::layers::{backward, forward_eval, forward_train, Gradients, LayerConfig, LayerState, NetworkSpec};
use crate::metrics::MetricsReport;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// When set, replaces the rate of every dropout layer for this run.
    pub dropout_override: Option<f32>,
    /// Std of additive Gaussian input noise during training; 0 disables.
    pub noise_std: f64,
    /// Random temporal crop length; must equal the network's input length.
    pub crop_length: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_eps: 1e-8,
            dropout_override: None,
            noise_std: 0.0,
            crop_length: None,
            seed: 0,
        }
    }
}

/// Numerically stable binary cross entropy on logits. Targets are 0/1.
/// Returns the mean loss and the gradient with respect to the logits.
pub fn bce_loss<S: Scalar>(logits: &Tensor<S>, targets: &Tensor<S>) -> Result<(f64, Tensor<S>)> {
    if logits.shape() != targets.shape() {
        return Err(err_fmt!(
            Shape,
            "logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        ));
    }
    let n = logits.len() as f64;
    let inv_n = S::from_f64(1.0 / n);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.data().iter().zip(targets.data()) {
        debug_assert!(t == S::ZERO || t == S::ONE);
        // max(z,0) - z*t + ln(1 + exp(-|z|))
        let zf = z.to_f64();
        loss += zf.max(0.0) - zf * t.to_f64() + (-zf.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - t) * inv_n);
    }
    Ok((loss / n, Tensor::from_data(logits.shape(), grad)?))
}

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::ZERO {
        S::ONE / (S::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::ONE + e)
    }
}

/// Softmax cross entropy over `[B, C]` logits with integer labels.
pub fn softmax_ce_loss<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(f64, Tensor<S>)> {
    if logits.rank() != 2 {
        return Err(err_fmt!(Shape, "softmax expects [B,C] logits, got {:?}", logits.shape()));
    }
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(err_fmt!(Shape, "{} labels for batch of {b}", labels.len()));
    }
    let inv_b = S::from_f64(1.0 / b as f64);
    let mut loss = 0.0;
    let mut grad = vec![S::ZERO; b * c];
    for bi in 0..b {
        let label = labels[bi];
        if label >= c {
            return Err(err_fmt!(Label, "label {label} outside [0, {c})"));
        }
        let row = &logits.data()[bi * c..(bi + 1) * c];
        let max = row.iter().fold(row[0], |m, &v| m.maximum(v));
        let mut sum = S::ZERO;
        for &v in row {
            sum += (v - max).exp();
        }
        let lse = max.to_f64() + sum.to_f64().ln();
        loss += lse - row[label].to_f64();
        for ci in 0..c {
            let p = (row[ci] - max).exp() / sum;
            let y = if ci == label { S::ONE } else { S::ZERO };
            grad[bi * c + ci] = (p - y) * inv_b;
        }
    }
    Ok((loss / b as f64, Tensor::from_data(&[b, c], grad)?))
}

/// RMSProp accumulator, aligned with the flattened trainable parameters.
#[derive(Clone, Debug, Default)]
pub struct RmsPropState {
    acc: Vec<f64>,
}

/// One RMSProp update: `s <- decay*s + (1-decay)*g^2`,
/// `theta <- theta - lr*g / (sqrt(s) + eps)`.
pub fn rmsprop_step<S: Scalar>(
    state: &mut LayerState<S>,
    grads: &Gradients<S>,
    opt: &mut RmsPropState,
    lr: f64,
    decay: f64,
    eps: f64,
) -> Result<()> {
    let mut theta = state.flatten_trainable();
    let g = grads.flatten();
    if theta.len() != g.len() {
        return Err(err_fmt!(
            Internal,
            "gradient tree has {} values, state has {}",
            g.len(),
            theta.len()
        ));
    }
    if opt.acc.is_empty() {
        opt.acc = vec![0.0; theta.len()];
    } else if opt.acc.len() != theta.len() {
        return Err(Error::Internal("optimizer state does not match parameters".into()));
    }
    for i in 0..theta.len() {
        let s = &mut opt.acc[i];
        *s = decay * *s + (1.0 - decay) * g[i] * g[i];
        theta[i] -= lr * g[i] / (s.sqrt() + eps);
    }
    state.assign_trainable(&theta)
}

/// Replace every dropout rate in the spec; used for the config override.
fn apply_dropout_override(spec: &NetworkSpec, rate: f32) -> NetworkSpec {
    let mut spec = spec.clone();
    for layer in &mut spec.layers {
        if let LayerConfig::Dropout { rate: r } = layer {
            *r = rate;
        }
    }
    spec
}

/// Assemble a batch: optional random crop to the network input length,
/// optional additive Gaussian noise.
pub(crate) fn build_batch(
    instances: &[Tensor<f32>],
    idx: &[usize],
    crop: Option<usize>,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<Tensor<f32>> {
    let mut rows = Vec::with_capacity(idx.len());
    for &i in idx {
        let inst = &instances[i];
        let cropped = match crop {
            Some(len) if inst.shape()[0] != len => random_crop(inst, len, rng)?,
            _ => inst.clone(),
        };
        rows.push(cropped);
    }
    let refs: Vec<&Tensor<f32>> = rows.iter().collect();
    let mut batch = Tensor::stack(&refs)?;
    if noise_std > 0.0 {
        for v in batch.data_mut() {
            *v += rng.normal(0.0, noise_std) as f32;
        }
    }
    Ok(batch)
}

fn loss_and_grad(
    spec: &NetworkSpec,
    logits: &Tensor<f32>,
    labels: &[usize],
) -> Result<(f64, Tensor<f32>)> {
    if spec.output_units == 1 {
        let targets: Vec<f32> = labels.iter().map(|&l| l as f32).collect();
        let t = Tensor::from_data(logits.shape(), targets)?;
        bce_loss(logits, &t)
    } else {
        softmax_ce_loss(logits, labels)
    }
}

/// Mini-batch supervised training with RMSProp. Shuffles every epoch,
/// crops and noises per batch, and reports validation metrics from the
/// final state. The loss history holds one mean training loss per epoch.
pub fn train(
    spec: &NetworkSpec,
    state: &mut LayerState<f32>,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<MetricsReport> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training and validation sets must be nonempty".into()));
    }
    check_labels(spec, train_set)?;
    let spec = match cfg.dropout_override {
        Some(rate) => apply_dropout_override(spec, rate),
        None => spec.clone(),
    };
    if let Some(crop) = cfg.crop_length {
        if crop != spec.input_shape[0] {
            return Err(err_fmt!(
                Parameter,
                "crop length {crop} does not match network input length {}",
                spec.input_shape[0]
            ));
        }
        if let Some(shape) = train_set.instance_shape() {
            if crop > shape[0] {
                return Err(err_fmt!(
                    Parameter,
                    "crop length {crop} exceeds instance length {}",
                    shape[0]
                ));
            }
        }
    }
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }

    let mut rng = Rng::new(cfg.seed);
    let mut opt = RmsPropState::default();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // A lone instance cannot feed train-mode batchnorm.
            if chunk.len() < 2 && has_batchnorm(&spec) {
                continue;
            }
            let batch = build_batch(
                train_set.instances(),
                chunk,
                cfg.crop_length,
                cfg.noise_std,
                &mut rng,
            )?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels()[i]).collect();
            let (logits, cache) = forward_train(&spec, state, &batch, &mut rng)?;
            let (loss, grad) = loss_and_grad(&spec, &logits, &labels)?;
            let (grads, _) = backward(&spec, state, &cache, &grad)?;
            rmsprop_step(state, &grads, &mut opt, cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_eps)?;
            epoch_loss += loss;
            batches += 1;
        }
        loss_history.push(if batches > 0 { epoch_loss / batches as f64 } else { 0.0 });
    }

    let mut report = evaluate(&spec, state, val_set)?;
    report.loss_history = loss_history;
    Ok(report)
}

fn has_batchnorm(spec: &NetworkSpec) -> bool {
    spec.layers.iter().any(|l| matches!(l, LayerConfig::Batchnorm))
}

fn check_labels(spec: &NetworkSpec, set: &LabeledSet) -> Result<()> {
    let max_classes = if spec.output_units == 1 { 2 } else { spec.output_units };
    if set.num_classes() > max_classes {
        return Err(err_fmt!(
            Label,
            "{} classes exceed network capacity {max_classes}",
            set.num_classes()
        ));
    }
    Ok(())
}

/// Eval-mode predictions for one set. Instances longer than the network
/// input are center-cropped. Binary networks threshold the sigmoid at 0.5,
/// multi-class networks take the argmax.
pub fn predict(spec: &NetworkSpec, state: &LayerState<f32>, set: &LabeledSet) -> Result<Vec<usize>> {
    if set.is_empty() {
        return Err(Error::Data("cannot predict on an empty set".into()));
    }
    let mut preds = Vec::with_capacity(set.len());
    // Chunked to bound peak memory.
    for chunk in set.instances().chunks(256) {
        let rows: Vec<Tensor<f32>> = chunk
            .iter()
            .map(|inst| {
                if inst.shape()[0] != spec.input_shape[0] {
                    center_crop(inst, spec.input_shape[0])
                } else {
                    Ok(inst.clone())
                }
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<f32>> = rows.iter().collect();
        let batch = Tensor::stack(&refs)?;
        let logits = forward_eval(spec, state, &batch)?;
        preds.extend(logits_to_predictions(&logits));
    }
    Ok(preds)
}

pub fn logits_to_predictions(logits: &Tensor<f32>) -> Vec<usize> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    (0..b)
        .map(|bi| {
            let row = &logits.data()[bi * c..(bi + 1) * c];
            if c == 1 {
                // sigmoid(z) >= 0.5 iff z >= 0
                usize::from(row[0] >= 0.0)
            } else {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            }
        })
        .collect()
}

pub fn evaluate(spec: &NetworkSpec, state: &LayerState<f32>, set: &LabeledSet) -> Result<MetricsReport> {
    let preds = predict(spec, state, set)?;
    MetricsReport::from_predictions(set.labels(), &preds, set.num_classes(), set.class_names())
}

/// Self-training domain adaptation: label the unlabeled instances with the
/// current model, then run supervised training on those guesses. The input
/// tensors are never relabeled in place; a fresh set is built each pass.
pub fn pseudo_label_adapt(
    spec: &NetworkSpec,
    state: &mut LayerState<f32>,
    unlabeled: &[Tensor<f32>],
    cfg: &TrainConfig,
) -> Result<()> {
    if unlabeled.is_empty() {
        return Err(Error::Data("no unlabeled instances to adapt on".into()));
    }
    if cfg.epochs == 0 {
        return Ok(());
    }
    let num_classes = if spec.output_units == 1 { 2 } else { spec.output_units };
    let names: Vec<String> = (0..num_classes).map(|c| format!("class{c}")).collect();
    let probe = LabeledSet::new(
        unlabeled.to_vec(),
        vec![0; unlabeled.len()],
        num_classes,
        names.clone(),
    )?;
    let guessed = predict(spec, state, &probe)?;
    let pseudo = LabeledSet::new(unlabeled.to_vec(), guessed, num_classes, names)?;
    train(spec, state, &pseudo, &pseudo, cfg)?;
    Ok(())
}
