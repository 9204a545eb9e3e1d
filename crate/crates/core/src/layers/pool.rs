//! 1-d pooling over batched `[B, T, C]` tensors.

use crate::error::{err_fmt, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    GlobalAvg,
}

/// Max pooling with valid geometry, or a global mean over the time axis.
/// Max yields `[B, T', C]`; global average yields `[B, C]`.
pub fn pool1d<S: Scalar>(
    kind: PoolKind,
    input: &Tensor<S>,
    pool_size: usize,
    stride: usize,
) -> Result<Tensor<S>> {
    match kind {
        PoolKind::Max => max_pool(input, pool_size, stride).map(|(t, _)| t),
        PoolKind::GlobalAvg => global_avg_pool(input),
    }
}

/// Returns the pooled tensor plus the flat input index of each selected
/// maximum (first index wins ties), which the backward pass routes into.
pub fn max_pool<S: Scalar>(
    input: &Tensor<S>,
    pool_size: usize,
    stride: usize,
) -> Result<(Tensor<S>, Vec<usize>)> {
    if input.rank() != 3 {
        return Err(err_fmt!(Shape, "max_pool expects [B,T,C], got {:?}", input.shape()));
    }
    if pool_size == 0 || stride == 0 {
        return Err(err_fmt!(Parameter, "pool size and stride must be positive"));
    }
    let (b, t, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if pool_size > t {
        return Err(err_fmt!(Shape, "pool size {pool_size} exceeds length {t}"));
    }
    let t_out = (t - pool_size) / stride + 1;
    let mut out = vec![S::ZERO; b * t_out * c];
    let mut argmax = vec![0usize; b * t_out * c];
    let data = input.data();
    for bi in 0..b {
        for ti in 0..t_out {
            let start = ti * stride;
            for ci in 0..c {
                let mut best_idx = (bi * t + start) * c + ci;
                let mut best = data[best_idx];
                for p in 1..pool_size {
                    let idx = (bi * t + start + p) * c + ci;
                    if data[idx] > best {
                        best = data[idx];
                        best_idx = idx;
                    }
                }
                let o = (bi * t_out + ti) * c + ci;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((Tensor::from_data(&[b, t_out, c], out)?, argmax))
}

pub fn max_pool_backward<S: Scalar>(
    d_out: &Tensor<S>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<S>> {
    let mut dx = Tensor::zeros(input_shape)?;
    for (grad, &idx) in d_out.data().iter().zip(argmax) {
        dx.data_mut()[idx] += *grad;
    }
    Ok(dx)
}

pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    if input.rank() != 3 {
        return Err(err_fmt!(Shape, "global_avg_pool expects [B,T,C], got {:?}", input.shape()));
    }
    let (b, t, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let inv_t = S::ONE / S::from_f64(t as f64);
    let mut out = vec![S::ZERO; b * c];
    for bi in 0..b {
        for ti in 0..t {
            for ci in 0..c {
                out[bi * c + ci] += input.data()[(bi * t + ti) * c + ci];
            }
        }
    }
    for v in &mut out {
        *v = *v * inv_t;
    }
    Tensor::from_data(&[b, c], out)
}

pub fn global_avg_pool_backward<S: Scalar>(
    d_out: &Tensor<S>,
    input_shape: &[usize],
) -> Result<Tensor<S>> {
    let (b, t, c) = (input_shape[0], input_shape[1], input_shape[2]);
    let inv_t = S::ONE / S::from_f64(t as f64);
    let mut dx = vec![S::ZERO; b * t * c];
    for bi in 0..b {
        for ci in 0..c {
            let g = d_out.data()[bi * c + ci] * inv_t;
            for ti in 0..t {
                dx[(bi * t + ti) * c + ci] = g;
            }
        }
    }
    Tensor::from_data(input_shape, dx)
}
