//! Batched forward pass with an intermediate cache for backpropagation.

use super::batchnorm::{batchnorm_forward, BatchNormCache, BN_EPS, BN_MOMENTUM};
use super::pool::{global_avg_pool, max_pool};
use super::{
    ActivationKind, AffineParams, AlphaMode, LayerConfig, LayerParams, LayerState, MdKernel,
    NetworkSpec, Padding,
};
use crate::error::{err_fmt, Error, Result};
use crate::mdop::{md_smoothed, MdBackwardConfig};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct Cache<S> {
    pub(crate) items: Vec<LayerCache<S>>,
    pub(crate) n_layers: usize,
}

pub(crate) enum LayerCache<S> {
    Affine(AffineCache<S>),
    BatchNorm(BatchNormCache<S>),
    MaxPool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Gap { input_shape: Vec<usize> },
    Dropout { mask: Tensor<S> },
    Activation { output: Tensor<S>, kind: ActivationKind },
    PassThrough,
}

pub(crate) struct AffineCache<S> {
    /// Dense: flattened `[B,F]` input. Conv: padded `[B,Tp,C]` input.
    pub input: Tensor<S>,
    /// Shape the input had before flattening/padding.
    pub original_shape: Vec<usize>,
    /// Raw accumulation before alpha scaling; kept when alpha is in play.
    pub pre_alpha: Option<Tensor<S>>,
    /// Alpha values applied per unit (trainable values or inverse l1 norms).
    pub alpha_used: Option<Vec<S>>,
}

/// Train-mode forward: dropout active, batchnorm uses batch statistics and
/// running statistics are updated in place.
pub fn forward_train<S: Scalar>(
    spec: &NetworkSpec,
    state: &mut LayerState<S>,
    batch: &Tensor<S>,
    rng: &mut Rng,
) -> Result<(Tensor<S>, Cache<S>)> {
    let (out, cache, updates) = run_forward(spec, state, batch, Mode::Train, Some(rng), true)?;
    for (idx, mean, var) in updates {
        if let LayerParams::BatchNorm(p) = &mut state.layers[idx] {
            p.running_mean = mean;
            p.running_var = var;
        }
    }
    Ok((out, cache.expect("cache requested")))
}

/// Eval-mode forward: a pure function of state and input.
pub fn forward_eval<S: Scalar>(
    spec: &NetworkSpec,
    state: &LayerState<S>,
    batch: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (out, _, _) = run_forward(spec, state, batch, Mode::Eval, None, false)?;
    Ok(out)
}

type BnUpdate<S> = (usize, Tensor<S>, Tensor<S>);

fn run_forward<S: Scalar>(
    spec: &NetworkSpec,
    state: &LayerState<S>,
    batch: &Tensor<S>,
    mode: Mode,
    mut rng: Option<&mut Rng>,
    want_cache: bool,
) -> Result<(Tensor<S>, Option<Cache<S>>, Vec<BnUpdate<S>>)> {
    if state.layers.len() != spec.layers.len() {
        return Err(err_fmt!(
            Internal,
            "state has {} layers, spec has {}",
            state.layers.len(),
            spec.layers.len()
        ));
    }
    if batch.rank() != spec.input_shape.len() + 1 || batch.shape()[1..] != spec.input_shape[..] {
        return Err(err_fmt!(
            Shape,
            "batch shape {:?} does not match input shape {:?}",
            batch.shape(),
            spec.input_shape
        ));
    }

    let mut items: Vec<LayerCache<S>> = Vec::with_capacity(spec.layers.len() + 1);
    let mut updates = Vec::new();
    let mut cur = batch.clone();

    for (idx, (layer, params)) in spec.layers.iter().zip(&state.layers).enumerate() {
        cur = match (layer, params) {
            (&LayerConfig::Dense { md, alpha, .. }, LayerParams::Affine(p)) => {
                let (out, cache) = dense_forward(p, &cur, md, alpha, spec)?;
                items.push(LayerCache::Affine(cache));
                out
            }
            (&LayerConfig::Conv1d { md, alpha, padding, .. }, LayerParams::Affine(p)) => {
                let (out, cache) = conv_forward(p, &cur, md, alpha, padding, spec)?;
                items.push(LayerCache::Affine(cache));
                out
            }
            (&LayerConfig::Maxpool1d { pool, stride }, LayerParams::Stateless) => {
                let input_shape = cur.shape().to_vec();
                let (out, argmax) = max_pool(&cur, pool, stride)?;
                items.push(LayerCache::MaxPool { argmax, input_shape });
                out
            }
            (&LayerConfig::GlobalAvgPool, LayerParams::Stateless) => {
                let input_shape = cur.shape().to_vec();
                let out = global_avg_pool(&cur)?;
                items.push(LayerCache::Gap { input_shape });
                out
            }
            (&LayerConfig::Batchnorm, LayerParams::BatchNorm(p)) => {
                let (out, cache, update) =
                    batchnorm_forward(&cur, p, mode == Mode::Train, BN_MOMENTUM, BN_EPS)?;
                if let Some((mean, var)) = update {
                    updates.push((idx, mean, var));
                }
                match cache {
                    Some(c) => items.push(LayerCache::BatchNorm(c)),
                    None => items.push(LayerCache::PassThrough),
                }
                out
            }
            (&LayerConfig::Dropout { rate }, LayerParams::Stateless) => {
                if mode == Mode::Train && rate > 0.0 {
                    let rng = rng
                        .as_deref_mut()
                        .ok_or_else(|| Error::Internal("train forward needs an rng".into()))?;
                    let keep = 1.0 - rate as f64;
                    let scale = S::from_f64(1.0 / keep);
                    let mask_data: Vec<S> = (0..cur.len())
                        .map(|_| if rng.next_f64() < keep { scale } else { S::ZERO })
                        .collect();
                    let mask = Tensor::from_data(cur.shape(), mask_data)?;
                    let out = cur.zip(&mask, |a, m| a * m)?;
                    items.push(LayerCache::Dropout { mask });
                    out
                } else {
                    items.push(LayerCache::PassThrough);
                    cur
                }
            }
            (&LayerConfig::Activation { activation }, LayerParams::Stateless) => {
                let out = apply_activation(&cur, activation);
                items.push(LayerCache::Activation { output: out.clone(), kind: activation });
                out
            }
            (cfg, st) => {
                return Err(err_fmt!(
                    Internal,
                    "layer {idx}: config {cfg:?} does not match state {}",
                    params_kind(st)
                ))
            }
        };
    }

    // Implicit output layer: regular linear dense.
    let (out, out_cache) = dense_forward(&state.output, &cur, false, AlphaMode::None, spec)?;
    items.push(LayerCache::Affine(out_cache));

    let cache = want_cache.then_some(Cache { items, n_layers: spec.layers.len() });
    Ok((out, cache, updates))
}

fn params_kind<S>(p: &LayerParams<S>) -> &'static str {
    match p {
        LayerParams::Affine(_) => "affine",
        LayerParams::BatchNorm(_) => "batchnorm",
        LayerParams::Stateless => "stateless",
    }
}

pub(crate) fn apply_activation<S: Scalar>(x: &Tensor<S>, kind: ActivationKind) -> Tensor<S> {
    match kind {
        ActivationKind::Relu => x.map(|v| v.maximum(S::ZERO)),
        ActivationKind::Sigmoid => x.map(sigmoid),
        ActivationKind::Tanh => x.map(|v| v.tanh()),
        ActivationKind::Linear => x.clone(),
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::ZERO {
        S::ONE / (S::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::ONE + e)
    }
}

/// Flatten `[B, ...]` to `[B, F]` without moving data.
fn flatten_batch<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let b = x.shape()[0];
    let f = x.len() / b;
    x.clone().reshape(&[b, f])
}

pub(crate) fn alpha_values<S: Scalar>(
    params: &AffineParams<S>,
    mode: AlphaMode,
    units: usize,
    fan_in: usize,
) -> Option<Vec<S>> {
    match mode {
        AlphaMode::None => None,
        AlphaMode::Trainable => params.alpha.as_ref().map(|a| a.data().to_vec()),
        AlphaMode::InvL1Norm => {
            let w = params.weights.data();
            Some(
                (0..units)
                    .map(|j| {
                        let l1 = w[j * fan_in..(j + 1) * fan_in]
                            .iter()
                            .fold(S::ZERO, |acc, v| acc + v.abs());
                        if l1 > S::ZERO {
                            S::ONE / l1
                        } else {
                            S::ONE
                        }
                    })
                    .collect(),
            )
        }
    }
}

#[inline]
fn accumulate<S: Scalar>(w: &[S], x: &[S], md: bool, kernel: MdKernel, cfg: MdBackwardConfig) -> S {
    if !md {
        let mut acc = S::ZERO;
        for (&wi, &xi) in w.iter().zip(x) {
            acc += wi * xi;
        }
        acc
    } else {
        match kernel {
            MdKernel::Hard => crate::mdop::md_dot_unchecked(w, x),
            MdKernel::Smoothed => {
                let mut acc = S::ZERO;
                for (&wi, &xi) in w.iter().zip(x) {
                    acc += md_smoothed(wi, xi, cfg);
                }
                acc
            }
        }
    }
}

fn dense_forward<S: Scalar>(
    params: &AffineParams<S>,
    input: &Tensor<S>,
    md: bool,
    alpha_mode: AlphaMode,
    spec: &NetworkSpec,
) -> Result<(Tensor<S>, AffineCache<S>)> {
    let original_shape = input.shape().to_vec();
    let x = flatten_batch(input)?;
    let (b, f) = (x.shape()[0], x.shape()[1]);
    let units = params.weights.shape()[0];
    if params.weights.shape()[1] != f {
        return Err(err_fmt!(
            Shape,
            "dense weights {:?} incompatible with input {:?}",
            params.weights.shape(),
            x.shape()
        ));
    }

    let alpha = alpha_values(params, alpha_mode, units, f);
    let keep_pre = alpha.is_some();
    let w = params.weights.data();
    let bias = params.bias.data();

    let mut pre = vec![S::ZERO; b * units];
    for bi in 0..b {
        let row = &x.data()[bi * f..(bi + 1) * f];
        for j in 0..units {
            pre[bi * units + j] =
                accumulate(&w[j * f..(j + 1) * f], row, md, spec.md_kernel, spec.md_backward);
        }
    }

    let mut out = vec![S::ZERO; b * units];
    for bi in 0..b {
        for j in 0..units {
            let a = alpha.as_ref().map_or(S::ONE, |al| al[j]);
            out[bi * units + j] = a * pre[bi * units + j] + bias[j];
        }
    }

    let cache = AffineCache {
        input: x,
        original_shape,
        pre_alpha: keep_pre.then(|| Tensor::from_data(&[b, units], pre).expect("shape")),
        alpha_used: alpha,
    };
    Ok((Tensor::from_data(&[b, units], out)?, cache))
}

/// Zero-pad the time axis for same-padding convolutions. Zeros are neutral
/// for both kernels: they annihilate under md and multiply away otherwise.
pub(crate) fn pad_batch<S: Scalar>(x: &Tensor<S>, kernel_len: usize) -> Result<(Tensor<S>, usize)> {
    let (b, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let pad_left = (kernel_len - 1) / 2;
    let pad_total = kernel_len - 1;
    let tp = t + pad_total;
    let mut data = vec![S::ZERO; b * tp * c];
    for bi in 0..b {
        for ti in 0..t {
            let src = (bi * t + ti) * c;
            let dst = (bi * tp + ti + pad_left) * c;
            data[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
        }
    }
    Ok((Tensor::from_data(&[b, tp, c], data)?, pad_left))
}

fn conv_forward<S: Scalar>(
    params: &AffineParams<S>,
    input: &Tensor<S>,
    md: bool,
    alpha_mode: AlphaMode,
    padding: Padding,
    spec: &NetworkSpec,
) -> Result<(Tensor<S>, AffineCache<S>)> {
    if input.rank() != 3 {
        return Err(err_fmt!(Shape, "conv1d expects [B,T,C], got {:?}", input.shape()));
    }
    let original_shape = input.shape().to_vec();
    let (k, l, c) = (
        params.weights.shape()[0],
        params.weights.shape()[1],
        params.weights.shape()[2],
    );
    if input.shape()[2] != c {
        return Err(err_fmt!(
            Shape,
            "conv weights expect {c} channels, input has {}",
            input.shape()[2]
        ));
    }

    let x = match padding {
        Padding::Valid => input.clone(),
        Padding::Same => pad_batch(input, l)?.0,
    };
    let (b, tp) = (x.shape()[0], x.shape()[1]);
    if l > tp {
        return Err(err_fmt!(Shape, "kernel length {l} exceeds signal length {tp}"));
    }
    let t_out = tp - l + 1;
    let win = l * c;

    let alpha = alpha_values(params, alpha_mode, k, win);
    let keep_pre = alpha.is_some();
    let w = params.weights.data();
    let bias = params.bias.data();

    let mut pre = vec![S::ZERO; b * t_out * k];
    for bi in 0..b {
        for ti in 0..t_out {
            let window = &x.data()[(bi * tp + ti) * c..(bi * tp + ti) * c + win];
            let dst = (bi * t_out + ti) * k;
            for ki in 0..k {
                pre[dst + ki] = accumulate(
                    &w[ki * win..(ki + 1) * win],
                    window,
                    md,
                    spec.md_kernel,
                    spec.md_backward,
                );
            }
        }
    }

    let mut out = vec![S::ZERO; b * t_out * k];
    for (i, &p) in pre.iter().enumerate() {
        let ki = i % k;
        let a = alpha.as_ref().map_or(S::ONE, |al| al[ki]);
        out[i] = a * p + bias[ki];
    }

    let cache = AffineCache {
        input: x,
        original_shape,
        pre_alpha: keep_pre.then(|| Tensor::from_data(&[b, t_out, k], pre).expect("shape")),
        alpha_used: alpha,
    };
    Ok((Tensor::from_data(&[b, t_out, k], out)?, cache))
}
