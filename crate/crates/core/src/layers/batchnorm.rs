//! Batch normalization over the trailing feature axis.

use crate::error::{err_fmt, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<S> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
}

impl<S: Scalar> BatchNormParams<S> {
    pub fn identity(features: usize) -> Result<Self> {
        Ok(BatchNormParams {
            gamma: Tensor::filled(&[features], S::ONE)?,
            beta: Tensor::zeros(&[features])?,
            running_mean: Tensor::zeros(&[features])?,
            running_var: Tensor::filled(&[features], S::ONE)?,
        })
    }

    pub fn cast<T: Scalar>(&self) -> BatchNormParams<T> {
        BatchNormParams {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
        }
    }
}

/// Cached intermediates for the train-mode backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<S> {
    pub x_hat: Tensor<S>,
    pub inv_std: Vec<S>,
    pub rows: usize,
}

/// Train mode normalizes with batch statistics (biased variance) and folds
/// them into the running statistics with momentum; eval mode normalizes with
/// the running statistics. Returns the updated running stats in train mode
/// rather than mutating, so callers control when state changes.
#[allow(clippy::type_complexity)]
pub fn batchnorm_forward<S: Scalar>(
    x: &Tensor<S>,
    params: &BatchNormParams<S>,
    train: bool,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<S>, Option<BatchNormCache<S>>, Option<(Tensor<S>, Tensor<S>)>)> {
    let features = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("batchnorm on rank-0 tensor".into()))?;
    if features != params.gamma.len() {
        return Err(err_fmt!(
            Shape,
            "batchnorm features {features} != params {}",
            params.gamma.len()
        ));
    }
    let rows = x.len() / features;
    let eps_s = S::from_f64(eps);

    if !train {
        let mut out = vec![S::ZERO; x.len()];
        let g = params.gamma.data();
        let b = params.beta.data();
        let rm = params.running_mean.data();
        let rv = params.running_var.data();
        for r in 0..rows {
            for f in 0..features {
                let v = x.data()[r * features + f];
                let inv = S::ONE / (rv[f] + eps_s).sqrt();
                out[r * features + f] = g[f] * ((v - rm[f]) * inv) + b[f];
            }
        }
        return Ok((Tensor::from_data(x.shape(), out)?, None, None));
    }

    if x.shape()[0] < 2 {
        return Err(err_fmt!(Batch, "batchnorm train mode needs batch size >= 2, got {}", x.shape()[0]));
    }
    let n = S::from_f64(rows as f64);
    let mut mean = vec![S::ZERO; features];
    for r in 0..rows {
        for f in 0..features {
            mean[f] += x.data()[r * features + f];
        }
    }
    for m in &mut mean {
        *m = *m / n;
    }
    let mut var = vec![S::ZERO; features];
    for r in 0..rows {
        for f in 0..features {
            let d = x.data()[r * features + f] - mean[f];
            var[f] += d * d;
        }
    }
    for v in &mut var {
        *v = *v / n;
    }

    let inv_std: Vec<S> = var.iter().map(|&v| S::ONE / (v + eps_s).sqrt()).collect();
    let mut x_hat = vec![S::ZERO; x.len()];
    let mut out = vec![S::ZERO; x.len()];
    let g = params.gamma.data();
    let b = params.beta.data();
    for r in 0..rows {
        for f in 0..features {
            let h = (x.data()[r * features + f] - mean[f]) * inv_std[f];
            x_hat[r * features + f] = h;
            out[r * features + f] = g[f] * h + b[f];
        }
    }

    let mom = S::from_f64(momentum);
    let one_minus = S::ONE - mom;
    let new_mean: Vec<S> = params
        .running_mean
        .data()
        .iter()
        .zip(&mean)
        .map(|(&r, &m)| mom * r + one_minus * m)
        .collect();
    let new_var: Vec<S> = params
        .running_var
        .data()
        .iter()
        .zip(&var)
        .map(|(&r, &v)| mom * r + one_minus * v)
        .collect();

    Ok((
        Tensor::from_data(x.shape(), out)?,
        Some(BatchNormCache {
            x_hat: Tensor::from_data(x.shape(), x_hat)?,
            inv_std,
            rows,
        }),
        Some((
            Tensor::from_vec(new_mean)?,
            Tensor::from_vec(new_var)?,
        )),
    ))
}

/// Standard train-mode batchnorm gradient. Returns (dx, dgamma, dbeta).
pub fn batchnorm_backward<S: Scalar>(
    d_out: &Tensor<S>,
    cache: &BatchNormCache<S>,
    gamma: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let features = gamma.len();
    let rows = cache.rows;
    let n = S::from_f64(rows as f64);

    let mut d_gamma = vec![S::ZERO; features];
    let mut d_beta = vec![S::ZERO; features];
    for r in 0..rows {
        for f in 0..features {
            let i = r * features + f;
            d_gamma[f] += d_out.data()[i] * cache.x_hat.data()[i];
            d_beta[f] += d_out.data()[i];
        }
    }

    // dx = (gamma * inv_std / n) * (n*d_xhat - sum(d_xhat) - x_hat*sum(d_xhat*x_hat))
    let mut dx = vec![S::ZERO; d_out.len()];
    for f in 0..features {
        let mut sum_dh = S::ZERO;
        let mut sum_dh_h = S::ZERO;
        for r in 0..rows {
            let i = r * features + f;
            let dh = d_out.data()[i] * gamma.data()[f];
            sum_dh += dh;
            sum_dh_h += dh * cache.x_hat.data()[i];
        }
        let scale = cache.inv_std[f] / n;
        for r in 0..rows {
            let i = r * features + f;
            let dh = d_out.data()[i] * gamma.data()[f];
            dx[i] = scale * (n * dh - sum_dh - cache.x_hat.data()[i] * sum_dh_h);
        }
    }

    Ok((
        Tensor::from_data(d_out.shape(), dx)?,
        Tensor::from_vec(d_gamma)?,
        Tensor::from_vec(d_beta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_output_is_normalized() {
        let x = Tensor::from_data(
            &[4, 2],
            vec![1.0f64, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0],
        )
        .unwrap();
        let params = BatchNormParams::identity(2).unwrap();
        let (y, _, _) = batchnorm_forward(&x, &params, true, BN_MOMENTUM, BN_EPS).unwrap();
        for f in 0..2 {
            let col: Vec<f64> = (0..4).map(|r| y.data()[r * 2 + f]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn zero_variance_feature_maps_to_zero() {
        let x = Tensor::from_data(&[3, 1], vec![5.0f64, 5.0, 5.0]).unwrap();
        let params = BatchNormParams::identity(1).unwrap();
        let (y, _, _) = batchnorm_forward(&x, &params, true, BN_MOMENTUM, BN_EPS).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn eval_matches_train_when_running_stats_equal_batch_stats() {
        let x = Tensor::from_data(&[2, 2], vec![1.0f64, -1.0, 3.0, 5.0]).unwrap();
        let mut params = BatchNormParams::identity(2).unwrap();
        // batch stats: mean (2, 2), biased var (1, 9)
        params.running_mean = Tensor::from_vec(vec![2.0, 2.0]).unwrap();
        params.running_var = Tensor::from_vec(vec![1.0, 9.0]).unwrap();
        let (train_out, _, _) = batchnorm_forward(&x, &params, true, BN_MOMENTUM, BN_EPS).unwrap();
        let (eval_out, _, _) = batchnorm_forward(&x, &params, false, BN_MOMENTUM, BN_EPS).unwrap();
        for (a, b) in train_out.data().iter().zip(eval_out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn train_needs_two_rows() {
        let x = Tensor::from_data(&[1, 3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let params = BatchNormParams::identity(3).unwrap();
        assert!(matches!(
            batchnorm_forward(&x, &params, true, BN_MOMENTUM, BN_EPS),
            Err(Error::Batch(_))
        ));
    }
}
