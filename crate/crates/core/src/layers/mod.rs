//! Layer zoo and network state.
//!
//! A network is a declarative [`NetworkSpec`]: an input shape, a stack of
//! [`LayerConfig`]s and an output width. The final layer is always a regular
//! linear layer appended implicitly, so md networks keep the conventional
//! dot product confined to the last layer. Parameters live in a
//! [`LayerState`] aligned index-for-index with the config stack.

mod backward;
mod batchnorm;
mod forward;
mod pool;

pub use backward::{backward, Gradients, LayerGrads, ParamGrads};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormParams, BN_EPS, BN_MOMENTUM};
pub use forward::{forward_eval, forward_train, Cache, Mode};
pub use pool::{global_avg_pool, max_pool, pool1d, PoolKind};

use crate::error::{err_fmt, Error, Result};
use crate::mdop::MdBackwardConfig;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

/// Scaling of md pre-activations. Batch normalization subsumes the scaling,
/// so md layers feeding a batchnorm use `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    Trainable,
    InvL1Norm,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerConfig {
    Dense {
        units: usize,
        md: bool,
        alpha: AlphaMode,
    },
    Conv1d {
        kernels: usize,
        kernel_len: usize,
        md: bool,
        alpha: AlphaMode,
        padding: Padding,
    },
    Maxpool1d {
        pool: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Batchnorm,
    Dropout {
        rate: f32,
    },
    Activation {
        activation: ActivationKind,
    },
}

/// Which md forward kernel the network runs. `Hard` is the real operator;
/// `Smoothed` swaps in the differentiable surrogate so gradient checks can
/// compare backward against finite differences of the forward loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MdKernel {
    #[default]
    Hard,
    Smoothed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerConfig>,
    pub output_units: usize,
    #[serde(default)]
    pub md_backward: MdBackwardConfig,
    #[serde(default)]
    pub md_kernel: MdKernel,
}

fn flat_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerConfig>, output_units: usize) -> Self {
        NetworkSpec {
            input_shape,
            layers,
            output_units,
            md_backward: MdBackwardConfig::default(),
            md_kernel: MdKernel::Hard,
        }
    }

    /// Per-instance output shape of every layer, checked for consistency.
    /// The final entry is the implicit output layer, `[output_units]`.
    pub fn shape_check(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(err_fmt!(Spec, "bad input shape {:?}", self.input_shape));
        }
        if self.output_units == 0 {
            return Err(Error::Spec("output_units must be positive".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = self.input_shape.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| err_fmt!(Spec, "layer {idx}: {msg}");
            match *layer {
                LayerConfig::Dense { units, md, alpha } => {
                    if units == 0 {
                        return Err(fail("dense units must be positive".into()));
                    }
                    check_alpha(md, alpha, self.layers.get(idx + 1..).unwrap_or(&[]))
                        .map_err(|e| fail(e))?;
                    cur = vec![units];
                }
                LayerConfig::Conv1d { kernels, kernel_len, md, alpha, padding } => {
                    if cur.len() != 2 {
                        return Err(fail(format!("conv1d needs [T,C] input, got {cur:?}")));
                    }
                    if kernels == 0 || kernel_len == 0 {
                        return Err(fail("conv1d kernels and kernel_len must be positive".into()));
                    }
                    let (t, _c) = (cur[0], cur[1]);
                    let t_out = match padding {
                        Padding::Valid => {
                            if kernel_len > t {
                                return Err(fail(format!(
                                    "kernel length {kernel_len} exceeds signal length {t}"
                                )));
                            }
                            t - kernel_len + 1
                        }
                        Padding::Same => t,
                    };
                    check_alpha(md, alpha, self.layers.get(idx + 1..).unwrap_or(&[]))
                        .map_err(|e| fail(e))?;
                    cur = vec![t_out, kernels];
                }
                LayerConfig::Maxpool1d { pool, stride } => {
                    if cur.len() != 2 {
                        return Err(fail(format!("maxpool1d needs [T,C] input, got {cur:?}")));
                    }
                    if pool == 0 || stride == 0 {
                        return Err(fail("pool and stride must be positive".into()));
                    }
                    if pool > cur[0] {
                        return Err(fail(format!("pool size {pool} exceeds length {}", cur[0])));
                    }
                    cur = vec![(cur[0] - pool) / stride + 1, cur[1]];
                }
                LayerConfig::GlobalAvgPool => {
                    if cur.len() != 2 {
                        return Err(fail(format!("global-avg-pool needs [T,C] input, got {cur:?}")));
                    }
                    cur = vec![cur[1]];
                }
                LayerConfig::Batchnorm => {}
                LayerConfig::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(fail(format!("dropout rate {rate} outside [0,1)")));
                    }
                }
                LayerConfig::Activation { .. } => {}
            }
            shapes.push(cur.clone());
        }
        shapes.push(vec![self.output_units]);
        Ok(shapes)
    }

    /// Number of scalar features entering the implicit output layer.
    pub fn output_layer_fan_in(&self) -> Result<usize> {
        let shapes = self.shape_check()?;
        let last_hidden = if shapes.len() >= 2 {
            shapes[shapes.len() - 2].clone()
        } else {
            self.input_shape.clone()
        };
        Ok(flat_len(&last_hidden))
    }

    pub fn input_len(&self) -> usize {
        flat_len(&self.input_shape)
    }
}

/// `alpha` is only meaningful on md layers and is redundant (and therefore
/// rejected) when a batch normalization directly consumes the layer's
/// response, pooling layers in between included.
fn check_alpha(md: bool, alpha: AlphaMode, rest: &[LayerConfig]) -> std::result::Result<(), String> {
    if alpha == AlphaMode::None {
        return Ok(());
    }
    if !md {
        return Err("alpha scaling requires an md layer".into());
    }
    for layer in rest {
        match layer {
            LayerConfig::Maxpool1d { .. } | LayerConfig::GlobalAvgPool => continue,
            LayerConfig::Batchnorm => {
                return Err("alpha scaling is subsumed by the following batchnorm".into())
            }
            _ => break,
        }
    }
    Ok(())
}

/// Weights, biases and normalization statistics for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<S = f32> {
    pub layers: Vec<LayerParams<S>>,
    /// Implicit final regular linear layer.
    pub output: AffineParams<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams<S> {
    /// Dense: `[units, fan_in]`. Conv1d: `[kernels, kernel_len, channels]`.
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    /// Present only for `AlphaMode::Trainable`.
    pub alpha: Option<Tensor<S>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<S> {
    Affine(AffineParams<S>),
    BatchNorm(BatchNormParams<S>),
    Stateless,
}

impl<S: Scalar> LayerState<S> {
    pub fn cast<T: Scalar>(&self) -> LayerState<T> {
        let cast_affine = |p: &AffineParams<S>| AffineParams {
            weights: p.weights.cast(),
            bias: p.bias.cast(),
            alpha: p.alpha.as_ref().map(|a| a.cast()),
        };
        LayerState {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    LayerParams::Affine(p) => LayerParams::Affine(cast_affine(p)),
                    LayerParams::BatchNorm(p) => LayerParams::BatchNorm(p.cast()),
                    LayerParams::Stateless => LayerParams::Stateless,
                })
                .collect(),
            output: cast_affine(&self.output),
        }
    }
}

/// He-initialized parameters for a spec: zero-mean Gaussians with
/// `std = sqrt(2 / fan_in)` for weights, zero biases, unit alpha and
/// batchnorm scale, zero shift, unit running variance.
pub fn init_network<S: Scalar>(spec: &NetworkSpec, rng: &mut Rng) -> Result<LayerState<S>> {
    let shapes = spec.shape_check()?;
    let mut cur: Vec<usize> = spec.input_shape.clone();
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        let params = match *layer {
            LayerConfig::Dense { units, alpha, .. } => {
                let fan_in = flat_len(&cur);
                let std = (2.0 / fan_in as f64).sqrt();
                LayerParams::Affine(AffineParams {
                    weights: Tensor::gaussian(&[units, fan_in], 0.0, std, rng)?,
                    bias: Tensor::zeros(&[units])?,
                    alpha: trainable_alpha(alpha, units)?,
                })
            }
            LayerConfig::Conv1d { kernels, kernel_len, alpha, .. } => {
                let channels = cur[1];
                let fan_in = kernel_len * channels;
                let std = (2.0 / fan_in as f64).sqrt();
                LayerParams::Affine(AffineParams {
                    weights: Tensor::gaussian(&[kernels, kernel_len, channels], 0.0, std, rng)?,
                    bias: Tensor::zeros(&[kernels])?,
                    alpha: trainable_alpha(alpha, kernels)?,
                })
            }
            LayerConfig::Batchnorm => {
                let features = *cur.last().expect("shape checked");
                LayerParams::BatchNorm(BatchNormParams::identity(features)?)
            }
            _ => LayerParams::Stateless,
        };
        layers.push(params);
        cur = shapes[idx].clone();
    }
    let fan_in = flat_len(&cur);
    let std = (2.0 / fan_in as f64).sqrt();
    let output = AffineParams {
        weights: Tensor::gaussian(&[spec.output_units, fan_in], 0.0, std, rng)?,
        bias: Tensor::zeros(&[spec.output_units])?,
        alpha: None,
    };
    Ok(LayerState { layers, output })
}

fn trainable_alpha<S: Scalar>(mode: AlphaMode, units: usize) -> Result<Option<Tensor<S>>> {
    Ok(match mode {
        AlphaMode::Trainable => Some(Tensor::filled(&[units], S::ONE)?),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn table1_shape_chain() {
        let spec = presets::ir_table1(true, None);
        let shapes = spec.shape_check().unwrap();
        // conv/pool time-axis lengths through the stack.
        let time_lens: Vec<usize> = shapes
            .iter()
            .filter(|s| s.len() == 2)
            .map(|s| s[0])
            .collect();
        assert_eq!(time_lens, vec![30, 15, 15, 15, 13, 6, 6, 6, 4, 2, 2, 2]);
        assert_eq!(shapes[shapes.len() - 2], vec![64]);
        assert_eq!(shapes.last().unwrap(), &vec![1]);
    }

    #[test]
    fn table1_init_shapes() {
        let spec = presets::ir_table1(false, None);
        let mut rng = Rng::new(1);
        let state: LayerState<f32> = init_network(&spec, &mut rng).unwrap();
        let affine_shapes: Vec<Vec<usize>> = state
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerParams::Affine(p) => Some(p.weights.shape().to_vec()),
                _ => None,
            })
            .collect();
        assert_eq!(
            affine_shapes,
            vec![vec![16, 3, 1], vec![32, 3, 16], vec![64, 3, 32], vec![64, 64]]
        );
        assert_eq!(state.output.weights.shape(), &[1, 64]);
    }

    #[test]
    fn table4_init_shapes() {
        let spec = presets::mixtures_table4(true);
        let mut rng = Rng::new(1);
        let state: LayerState<f32> = init_network(&spec, &mut rng).unwrap();
        match &state.layers[0] {
            LayerParams::Affine(p) => assert_eq!(p.weights.shape(), &[64, 5, 16]),
            other => panic!("unexpected first layer {other:?}"),
        }
        assert_eq!(state.output.weights.shape(), &[3, 256]);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = presets::ir_table1(true, Some(0.5));
        let a: LayerState<f32> = init_network(&spec, &mut Rng::new(42)).unwrap();
        let b: LayerState<f32> = init_network(&spec, &mut Rng::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_requires_md() {
        let spec = NetworkSpec::new(
            vec![4],
            vec![LayerConfig::Dense { units: 3, md: false, alpha: AlphaMode::Trainable }],
            2,
        );
        assert!(spec.shape_check().is_err());
    }

    #[test]
    fn alpha_rejected_when_batchnorm_follows() {
        let spec = NetworkSpec::new(
            vec![4],
            vec![
                LayerConfig::Dense { units: 3, md: true, alpha: AlphaMode::Trainable },
                LayerConfig::Batchnorm,
            ],
            2,
        );
        assert!(spec.shape_check().is_err());
        let ok = NetworkSpec::new(
            vec![4],
            vec![
                LayerConfig::Dense { units: 3, md: true, alpha: AlphaMode::Trainable },
                LayerConfig::Activation { activation: ActivationKind::Relu },
            ],
            2,
        );
        assert!(ok.shape_check().is_ok());
    }

    #[test]
    fn conv_on_flat_input_rejected() {
        let spec = NetworkSpec::new(
            vec![8],
            vec![LayerConfig::Conv1d {
                kernels: 2,
                kernel_len: 3,
                md: false,
                alpha: AlphaMode::None,
                padding: Padding::Valid,
            }],
            1,
        );
        assert!(spec.shape_check().is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = presets::mixtures_table4(true);
        let json = serde_json::to_string_pretty(&spec).unwrap();
        let back: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
