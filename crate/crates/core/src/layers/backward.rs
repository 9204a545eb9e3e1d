//! Backpropagation through the layer stack.
//!
//! md layers differentiate the tanh-smoothed surrogate of the md operator;
//! everything else uses the standard gradients. The pass also produces the
//! gradient with respect to the network input, which the adversarial
//! training loop chains through the generator.

use super::forward::{AffineCache, Cache, LayerCache};
use super::pool::{global_avg_pool_backward, max_pool_backward};
use super::{
    batchnorm::batchnorm_backward, ActivationKind, AffineParams, LayerConfig, LayerParams,
    LayerState, NetworkSpec, Padding,
};
use crate::error::{err_fmt, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<S> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub alpha: Option<Tensor<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrads<S> {
    Affine(ParamGrads<S>),
    BatchNorm { gamma: Tensor<S>, beta: Tensor<S> },
    Stateless,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    pub layers: Vec<LayerGrads<S>>,
    pub output: ParamGrads<S>,
}

impl<S: Scalar> Gradients<S> {
    /// Accumulate another gradient tree of identical structure.
    pub fn add_assign(&mut self, other: &Gradients<S>) -> Result<()> {
        fn add_affine<S: Scalar>(a: &mut ParamGrads<S>, b: &ParamGrads<S>) -> Result<()> {
            a.weights = a.weights.add(&b.weights)?;
            a.bias = a.bias.add(&b.bias)?;
            match (&mut a.alpha, &b.alpha) {
                (Some(x), Some(y)) => *x = x.add(y)?,
                (None, None) => {}
                _ => return Err(Error::Internal("alpha gradient shape mismatch".into())),
            }
            Ok(())
        }
        if self.layers.len() != other.layers.len() {
            return Err(Error::Internal("gradient trees differ in depth".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (LayerGrads::Affine(x), LayerGrads::Affine(y)) => add_affine(x, y)?,
                (
                    LayerGrads::BatchNorm { gamma, beta },
                    LayerGrads::BatchNorm { gamma: g2, beta: b2 },
                ) => {
                    *gamma = gamma.add(g2)?;
                    *beta = beta.add(b2)?;
                }
                (LayerGrads::Stateless, LayerGrads::Stateless) => {}
                _ => return Err(Error::Internal("gradient trees differ in structure".into())),
            }
        }
        add_affine(&mut self.output, &other.output)
    }

    /// Trainable gradients flattened in the same order as
    /// [`LayerState::flatten_trainable`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let push_affine = |out: &mut Vec<f64>, p: &ParamGrads<S>| {
            out.extend(p.weights.data().iter().map(|v| v.to_f64()));
            out.extend(p.bias.data().iter().map(|v| v.to_f64()));
            if let Some(a) = &p.alpha {
                out.extend(a.data().iter().map(|v| v.to_f64()));
            }
        };
        for layer in &self.layers {
            match layer {
                LayerGrads::Affine(p) => push_affine(&mut out, p),
                LayerGrads::BatchNorm { gamma, beta } => {
                    out.extend(gamma.data().iter().map(|v| v.to_f64()));
                    out.extend(beta.data().iter().map(|v| v.to_f64()));
                }
                LayerGrads::Stateless => {}
            }
        }
        push_affine(&mut out, &self.output);
        out
    }
}

impl<S: Scalar> LayerState<S> {
    /// Trainable parameters (weights, biases, alphas, batchnorm scale and
    /// shift; not running statistics) as one flat f64 vector.
    pub fn flatten_trainable(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let push_affine = |out: &mut Vec<f64>, p: &AffineParams<S>| {
            out.extend(p.weights.data().iter().map(|v| v.to_f64()));
            out.extend(p.bias.data().iter().map(|v| v.to_f64()));
            if let Some(a) = &p.alpha {
                out.extend(a.data().iter().map(|v| v.to_f64()));
            }
        };
        for layer in &self.layers {
            match layer {
                LayerParams::Affine(p) => push_affine(&mut out, p),
                LayerParams::BatchNorm(p) => {
                    out.extend(p.gamma.data().iter().map(|v| v.to_f64()));
                    out.extend(p.beta.data().iter().map(|v| v.to_f64()));
                }
                LayerParams::Stateless => {}
            }
        }
        push_affine(&mut out, &self.output);
        out
    }

    /// Overwrite trainable parameters from a flat vector produced by
    /// [`Self::flatten_trainable`].
    pub fn assign_trainable(&mut self, values: &[f64]) -> Result<()> {
        let mut it = values.iter();
        let mut take = |t: &mut Tensor<S>| -> Result<()> {
            for v in t.data_mut() {
                *v = S::from_f64(
                    *it.next()
                        .ok_or_else(|| Error::Internal("too few parameter values".into()))?,
                );
            }
            Ok(())
        };
        let affine = |p: &mut AffineParams<S>, take: &mut dyn FnMut(&mut Tensor<S>) -> Result<()>| -> Result<()> {
            take(&mut p.weights)?;
            take(&mut p.bias)?;
            if let Some(a) = &mut p.alpha {
                take(a)?;
            }
            Ok(())
        };
        for layer in &mut self.layers {
            match layer {
                LayerParams::Affine(p) => affine(p, &mut take)?,
                LayerParams::BatchNorm(p) => {
                    take(&mut p.gamma)?;
                    take(&mut p.beta)?;
                }
                LayerParams::Stateless => {}
            }
        }
        affine(&mut self.output, &mut take)?;
        if it.next().is_some() {
            return Err(Error::Internal("too many parameter values".into()));
        }
        Ok(())
    }
}

/// Backward pass. `loss_grad` is dL/d(logits), shape `[B, output_units]`.
/// Returns gradients for every trainable tensor plus dL/d(input).
pub fn backward<S: Scalar>(
    spec: &NetworkSpec,
    state: &LayerState<S>,
    cache: &Cache<S>,
    loss_grad: &Tensor<S>,
) -> Result<(Gradients<S>, Tensor<S>)> {
    if cache.n_layers != spec.layers.len() || cache.items.len() != spec.layers.len() + 1 {
        return Err(Error::Internal("cache does not match spec".into()));
    }

    // Output layer first.
    let out_cache = match cache.items.last() {
        Some(LayerCache::Affine(c)) => c,
        _ => return Err(Error::Internal("missing output layer cache".into())),
    };
    let (out_grads, mut d) =
        dense_backward(&state.output, out_cache, loss_grad, false, spec)?;

    let mut layer_grads: Vec<LayerGrads<S>> = vec![LayerGrads::Stateless; spec.layers.len()];
    for idx in (0..spec.layers.len()).rev() {
        let item = &cache.items[idx];
        let params = &state.layers[idx];
        match (&spec.layers[idx], params, item) {
            (&LayerConfig::Dense { md, .. }, LayerParams::Affine(p), LayerCache::Affine(c)) => {
                let (grads, dx) = dense_backward(p, c, &d, md, spec)?;
                layer_grads[idx] = LayerGrads::Affine(grads);
                d = dx;
            }
            (
                &LayerConfig::Conv1d { md, padding, .. },
                LayerParams::Affine(p),
                LayerCache::Affine(c),
            ) => {
                let (grads, dx) = conv_backward(p, c, &d, md, padding, spec)?;
                layer_grads[idx] = LayerGrads::Affine(grads);
                d = dx;
            }
            (LayerConfig::Maxpool1d { .. }, _, LayerCache::MaxPool { argmax, input_shape }) => {
                d = max_pool_backward(&d, argmax, input_shape)?;
            }
            (LayerConfig::GlobalAvgPool, _, LayerCache::Gap { input_shape }) => {
                d = global_avg_pool_backward(&d, input_shape)?;
            }
            (LayerConfig::Batchnorm, LayerParams::BatchNorm(p), LayerCache::BatchNorm(c)) => {
                let (dx, dgamma, dbeta) = batchnorm_backward(&d, c, &p.gamma)?;
                layer_grads[idx] = LayerGrads::BatchNorm { gamma: dgamma, beta: dbeta };
                d = dx;
            }
            (LayerConfig::Batchnorm, _, LayerCache::PassThrough) => {
                return Err(Error::Internal(
                    "backward requires a train-mode cache (batchnorm ran in eval mode)".into(),
                ));
            }
            (LayerConfig::Dropout { .. }, _, LayerCache::Dropout { mask }) => {
                d = d.zip(mask, |g, m| g * m)?;
            }
            (LayerConfig::Dropout { .. }, _, LayerCache::PassThrough) => {}
            (LayerConfig::Activation { .. }, _, LayerCache::Activation { output, kind }) => {
                d = activation_backward(&d, output, *kind)?;
            }
            _ => {
                return Err(err_fmt!(Internal, "layer {idx}: cache does not match spec"));
            }
        }
    }

    Ok((Gradients { layers: layer_grads, output: out_grads }, d))
}

fn activation_backward<S: Scalar>(
    d: &Tensor<S>,
    output: &Tensor<S>,
    kind: ActivationKind,
) -> Result<Tensor<S>> {
    match kind {
        ActivationKind::Relu => d.zip(output, |g, o| if o > S::ZERO { g } else { S::ZERO }),
        ActivationKind::Sigmoid => d.zip(output, |g, o| g * o * (S::ONE - o)),
        ActivationKind::Tanh => d.zip(output, |g, o| g * (S::ONE - o * o)),
        ActivationKind::Linear => Ok(d.clone()),
    }
}

/// Per-element tanh tables for the smoothed-surrogate gradient:
/// `d/dw md(w,x) = tanh(a*x) + x*a*sech^2(a*w)` needs `tanh` and `sech^2`
/// of both operands, so both are precomputed once per tensor.
struct MdTables<S> {
    tanh: Vec<S>,
    sech_sq: Vec<S>,
}

fn md_tables<S: Scalar>(values: &[S], a: S) -> MdTables<S> {
    let mut tanh = Vec::with_capacity(values.len());
    let mut sech_sq = Vec::with_capacity(values.len());
    for &v in values {
        let t = (a * v).tanh();
        tanh.push(t);
        sech_sq.push((S::ONE - t * t).maximum(S::ZERO));
    }
    MdTables { tanh, sech_sq }
}

fn dense_backward<S: Scalar>(
    params: &AffineParams<S>,
    cache: &AffineCache<S>,
    d_out: &Tensor<S>,
    md: bool,
    spec: &NetworkSpec,
) -> Result<(ParamGrads<S>, Tensor<S>)> {
    let x = &cache.input;
    let (b, f) = (x.shape()[0], x.shape()[1]);
    let units = params.weights.shape()[0];
    if d_out.shape() != [b, units] {
        return Err(err_fmt!(
            Internal,
            "dense backward got gradient {:?}, expected [{b}, {units}]",
            d_out.shape()
        ));
    }

    let d_alpha = alpha_grad(params, cache, d_out);
    // Chain the upstream gradient through the alpha scaling.
    let d_pre: Vec<S> = match &cache.alpha_used {
        Some(al) => d_out
            .data()
            .iter()
            .enumerate()
            .map(|(i, &g)| g * al[i % units])
            .collect(),
        None => d_out.data().to_vec(),
    };

    let mut d_bias = vec![S::ZERO; units];
    for bi in 0..b {
        for j in 0..units {
            d_bias[j] += d_out.data()[bi * units + j];
        }
    }

    let w = params.weights.data();
    let mut d_w = vec![S::ZERO; units * f];
    let mut d_x = vec![S::ZERO; b * f];

    if md {
        let a = S::from_f64(spec.md_backward.a);
        let wt = md_tables(w, a);
        let xt = md_tables(x.data(), a);
        for bi in 0..b {
            for j in 0..units {
                let g = d_pre[bi * units + j];
                if g == S::ZERO {
                    continue;
                }
                for i in 0..f {
                    let wi = w[j * f + i];
                    let xi = x.data()[bi * f + i];
                    let widx = j * f + i;
                    let xidx = bi * f + i;
                    d_w[widx] += g * (xt.tanh[xidx] + xi * a * wt.sech_sq[widx]);
                    d_x[xidx] += g * (wt.tanh[widx] + wi * a * xt.sech_sq[xidx]);
                }
            }
        }
    } else {
        for bi in 0..b {
            for j in 0..units {
                let g = d_pre[bi * units + j];
                if g == S::ZERO {
                    continue;
                }
                let x_row = &x.data()[bi * f..(bi + 1) * f];
                let w_row = &w[j * f..(j + 1) * f];
                let dw_row = &mut d_w[j * f..(j + 1) * f];
                for i in 0..f {
                    dw_row[i] += g * x_row[i];
                }
                let dx_row = &mut d_x[bi * f..(bi + 1) * f];
                for i in 0..f {
                    dx_row[i] += g * w_row[i];
                }
            }
        }
    }

    let grads = ParamGrads {
        weights: Tensor::from_data(params.weights.shape(), d_w)?,
        bias: Tensor::from_vec(d_bias)?,
        alpha: d_alpha,
    };
    let dx = Tensor::from_data(&[b, f], d_x)?.reshape(&cache.original_shape)?;
    Ok((grads, dx))
}

fn alpha_grad<S: Scalar>(
    params: &AffineParams<S>,
    cache: &AffineCache<S>,
    d_out: &Tensor<S>,
) -> Option<Tensor<S>> {
    // Only trainable alphas receive a gradient; inverse-l1 alphas are
    // treated as constants of the forward pass.
    let alpha = params.alpha.as_ref()?;
    let pre = cache.pre_alpha.as_ref()?;
    let units = alpha.len();
    let mut d_alpha = vec![S::ZERO; units];
    for (i, &g) in d_out.data().iter().enumerate() {
        d_alpha[i % units] += g * pre.data()[i];
    }
    Some(Tensor::from_vec(d_alpha).expect("nonempty"))
}

fn conv_backward<S: Scalar>(
    params: &AffineParams<S>,
    cache: &AffineCache<S>,
    d_out: &Tensor<S>,
    md: bool,
    padding: Padding,
    spec: &NetworkSpec,
) -> Result<(ParamGrads<S>, Tensor<S>)> {
    let x = &cache.input; // padded when padding == Same
    let (b, tp, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (k, l) = (params.weights.shape()[0], params.weights.shape()[1]);
    let t_out = tp - l + 1;
    let win = l * c;
    if d_out.shape() != [b, t_out, k] {
        return Err(err_fmt!(
            Internal,
            "conv backward got gradient {:?}, expected [{b}, {t_out}, {k}]",
            d_out.shape()
        ));
    }

    let d_alpha = alpha_grad(params, cache, d_out);
    let d_pre: Vec<S> = match &cache.alpha_used {
        Some(al) => d_out
            .data()
            .iter()
            .enumerate()
            .map(|(i, &g)| g * al[i % k])
            .collect(),
        None => d_out.data().to_vec(),
    };

    let mut d_bias = vec![S::ZERO; k];
    for (i, &g) in d_out.data().iter().enumerate() {
        d_bias[i % k] += g;
    }

    let w = params.weights.data();
    let mut d_w = vec![S::ZERO; k * win];
    let mut d_x = vec![S::ZERO; b * tp * c];

    if md {
        let a = S::from_f64(spec.md_backward.a);
        let wt = md_tables(w, a);
        let xt = md_tables(x.data(), a);
        for bi in 0..b {
            for ti in 0..t_out {
                let x_base = (bi * tp + ti) * c;
                for ki in 0..k {
                    let g = d_pre[(bi * t_out + ti) * k + ki];
                    if g == S::ZERO {
                        continue;
                    }
                    let w_base = ki * win;
                    for i in 0..win {
                        let widx = w_base + i;
                        let xidx = x_base + i;
                        let wi = w[widx];
                        let xi = x.data()[xidx];
                        d_w[widx] += g * (xt.tanh[xidx] + xi * a * wt.sech_sq[widx]);
                        d_x[xidx] += g * (wt.tanh[widx] + wi * a * xt.sech_sq[xidx]);
                    }
                }
            }
        }
    } else {
        for bi in 0..b {
            for ti in 0..t_out {
                let x_base = (bi * tp + ti) * c;
                let window = &x.data()[x_base..x_base + win];
                for ki in 0..k {
                    let g = d_pre[(bi * t_out + ti) * k + ki];
                    if g == S::ZERO {
                        continue;
                    }
                    let w_row = &w[ki * win..(ki + 1) * win];
                    let dw_row = &mut d_w[ki * win..(ki + 1) * win];
                    for i in 0..win {
                        dw_row[i] += g * window[i];
                    }
                    let dx_win = &mut d_x[x_base..x_base + win];
                    for i in 0..win {
                        dx_win[i] += g * w_row[i];
                    }
                }
            }
        }
    }

    let dx_padded = Tensor::from_data(&[b, tp, c], d_x)?;
    let dx = match padding {
        Padding::Valid => dx_padded,
        Padding::Same => {
            let t = cache.original_shape[1];
            let pad_left = (l - 1) / 2;
            let mut out = vec![S::ZERO; b * t * c];
            for bi in 0..b {
                for ti in 0..t {
                    let src = (bi * tp + ti + pad_left) * c;
                    let dst = (bi * t + ti) * c;
                    out[dst..dst + c].copy_from_slice(&dx_padded.data()[src..src + c]);
                }
            }
            Tensor::from_data(&cache.original_shape, out)?
        }
    };

    let grads = ParamGrads {
        weights: Tensor::from_data(params.weights.shape(), d_w)?,
        bias: Tensor::from_vec(d_bias)?,
        alpha: d_alpha,
    };
    Ok((grads, dx))
}
