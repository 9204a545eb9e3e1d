//! Magnitude pruning with sign retention, compression accounting and int8
//! quantized inference.
//!
//! Pruning discards the magnitudes of the smallest weights per hidden
//! layer while keeping their signs; discarded entries are reconstructed as
//! `sgn(w) * m` with one shared magnitude per layer. Biases and the final
//! layer stay intact. Compression is accounted as 32 bits per intact
//! weight and 1 bit per binarized weight.

use crate::error::{err_fmt, Error, Result};
use crate::layers::{
    batchnorm_forward, forward_eval, global_avg_pool, max_pool, AffineParams, LayerConfig,
    LayerParams, LayerState, NetworkSpec, Padding, BN_EPS, BN_MOMENTUM,
};
use crate::mdop::{dequantize_q8, md_dot_q8, quantize_symmetric_q8};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Reconstruction magnitude for binarized entries: the mean |w| of the
/// binarized set per layer, or a fixed unit magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplacementMagnitude {
    MeanBinarized,
    Unit,
}

impl Default for ReplacementMagnitude {
    fn default() -> Self {
        ReplacementMagnitude::MeanBinarized
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrunedTensor {
    pub shape: Vec<usize>,
    /// true = kept at full precision.
    pub kept: Vec<bool>,
    /// Full-precision values at kept indices, in flat order.
    pub intact: Vec<f32>,
    /// Signs at binarized indices, in flat order, each in {-1, 0, +1}.
    pub signs: Vec<i8>,
    /// Shared reconstruction magnitude.
    pub magnitude: f32,
}

impl PrunedTensor {
    pub fn reconstruct(&self) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(self.kept.len());
        let mut it_kept = self.intact.iter();
        let mut it_sign = self.signs.iter();
        for &is_kept in &self.kept {
            if is_kept {
                data.push(*it_kept.next().ok_or_else(|| Error::Codec("intact underrun".into()))?);
            } else {
                let s = *it_sign.next().ok_or_else(|| Error::Codec("sign underrun".into()))?;
                data.push(s as f32 * self.magnitude);
            }
        }
        Tensor::from_data(&self.shape, data)
    }

    pub fn n_binarized(&self) -> usize {
        self.signs.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CompressedLayer {
    Pruned {
        weights: PrunedTensor,
        bias: Tensor<f32>,
        alpha: Option<Tensor<f32>>,
    },
    Intact(LayerParams<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedState {
    pub layers: Vec<CompressedLayer>,
    /// Final layer, always intact.
    pub output: AffineParams<f32>,
    pub fraction: f64,
    pub magnitude_mode: ReplacementMagnitude,
}

fn prune_tensor(t: &Tensor<f32>, fraction: f64, mode: ReplacementMagnitude) -> PrunedTensor {
    let n = t.len();
    let n_prune = ((fraction * n as f64) + 1e-9).floor() as usize;
    let n_prune = n_prune.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    // Smallest magnitude first; ties broken by lowest flat index.
    order.sort_by(|&a, &b| {
        t.data()[a]
            .abs()
            .partial_cmp(&t.data()[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept = vec![true; n];
    for &i in &order[..n_prune] {
        kept[i] = false;
    }
    let mut intact = Vec::with_capacity(n - n_prune);
    let mut signs = Vec::with_capacity(n_prune);
    let mut mag_sum = 0.0f64;
    for (i, &is_kept) in kept.iter().enumerate() {
        let v = t.data()[i];
        if is_kept {
            intact.push(v);
        } else {
            signs.push(if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            });
            mag_sum += v.abs() as f64;
        }
    }
    let magnitude = match mode {
        ReplacementMagnitude::Unit => 1.0,
        ReplacementMagnitude::MeanBinarized => {
            if n_prune > 0 {
                (mag_sum / n_prune as f64) as f32
            } else {
                0.0
            }
        }
    };
    PrunedTensor { shape: t.shape().to_vec(), kept, intact, signs, magnitude }
}

/// Binarize the `fraction` smallest-magnitude weights of every hidden
/// dense/conv layer. Biases, alphas, batchnorm parameters and the entire
/// output layer stay intact.
pub fn prune_sign_retain(
    state: &LayerState<f32>,
    fraction: f64,
    mode: ReplacementMagnitude,
) -> Result<CompressedState> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(err_fmt!(Parameter, "prune fraction {fraction} outside [0,1]"));
    }
    let layers = state
        .layers
        .iter()
        .map(|layer| match layer {
            LayerParams::Affine(p) => CompressedLayer::Pruned {
                weights: prune_tensor(&p.weights, fraction, mode),
                bias: p.bias.clone(),
                alpha: p.alpha.clone(),
            },
            other => CompressedLayer::Intact(other.clone()),
        })
        .collect();
    Ok(CompressedState {
        layers,
        output: state.output.clone(),
        fraction,
        magnitude_mode: mode,
    })
}

/// Space saved relative to a 32-bit dense store:
/// `1 - ((1-f)*32 + f*1) / 32 = 31f/32`.
pub fn compression_rate(fraction: f64) -> f64 {
    31.0 * fraction / 32.0
}

/// Fraction of weights that must be binarized to hit a target rate.
pub fn fraction_for_rate(rate: f64) -> Result<f64> {
    let max = 31.0 / 32.0;
    if !(0.0..=max).contains(&rate) {
        return Err(err_fmt!(Argument, "compression rate {rate} outside [0, {max:.6}]"));
    }
    Ok(32.0 * rate / 31.0)
}

/// Rebuild a runnable state with `sgn(w) * m` at binarized positions.
pub fn reconstruct(compressed: &CompressedState, spec: &NetworkSpec) -> Result<LayerState<f32>> {
    if compressed.layers.len() != spec.layers.len() {
        return Err(Error::Internal("compressed state does not match spec".into()));
    }
    let layers = compressed
        .layers
        .iter()
        .map(|layer| {
            Ok(match layer {
                CompressedLayer::Pruned { weights, bias, alpha } => {
                    LayerParams::Affine(AffineParams {
                        weights: weights.reconstruct()?,
                        bias: bias.clone(),
                        alpha: alpha.clone(),
                    })
                }
                CompressedLayer::Intact(p) => p.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(LayerState { layers, output: compressed.output.clone() })
}

/// Eval-mode forward through the reconstructed weights.
pub fn forward_compressed(
    spec: &NetworkSpec,
    compressed: &CompressedState,
    batch: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let state = reconstruct(compressed, spec)?;
    forward_eval(spec, &state, batch)
}

// ---------------------------------------------------------------------------
// int8 quantization
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum QuantizedLayer {
    /// md dense/conv weights on the int8 grid with a per-tensor scale.
    MdAffine {
        q_weights: Vec<i8>,
        shape: Vec<usize>,
        scale: f32,
        bias: Tensor<f32>,
        alpha: Option<Tensor<f32>>,
    },
    Float(LayerParams<f32>),
}

/// Per-tensor symmetric int8 quantization of every md layer's weights.
/// Regular layers and the output layer stay in float; md inference then
/// runs on integer accumulation with one scale multiply per output.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedState {
    pub layers: Vec<QuantizedLayer>,
    pub output: AffineParams<f32>,
}

pub fn quantize_q8(spec: &NetworkSpec, state: &LayerState<f32>) -> Result<QuantizedState> {
    if state.layers.len() != spec.layers.len() {
        return Err(Error::Internal("state does not match spec".into()));
    }
    let layers = spec
        .layers
        .iter()
        .zip(&state.layers)
        .map(|(cfg, params)| match (cfg, params) {
            (LayerConfig::Dense { md: true, .. }, LayerParams::Affine(p))
            | (LayerConfig::Conv1d { md: true, .. }, LayerParams::Affine(p)) => {
                let (q, scale) = quantize_symmetric_q8(p.weights.data());
                QuantizedLayer::MdAffine {
                    q_weights: q,
                    shape: p.weights.shape().to_vec(),
                    scale,
                    bias: p.bias.clone(),
                    alpha: p.alpha.clone(),
                }
            }
            _ => QuantizedLayer::Float(params.clone()),
        })
        .collect();
    Ok(QuantizedState { layers, output: state.output.clone() })
}

/// Dequantized view of a quantized state, for comparing against the float
/// path.
pub fn dequantize_state(spec: &NetworkSpec, q: &QuantizedState) -> Result<LayerState<f32>> {
    let layers = q
        .layers
        .iter()
        .map(|layer| {
            Ok(match layer {
                QuantizedLayer::MdAffine { q_weights, shape, scale, bias, alpha } => {
                    LayerParams::Affine(AffineParams {
                        weights: Tensor::from_data(shape, dequantize_q8(q_weights, *scale))?,
                        bias: bias.clone(),
                        alpha: alpha.clone(),
                    })
                }
                QuantizedLayer::Float(p) => p.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let _ = spec;
    Ok(LayerState { layers, output: q.output.clone() })
}

fn relu(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| v.max(0.0))
}

fn apply_activation(x: &Tensor<f32>, kind: crate::layers::ActivationKind) -> Tensor<f32> {
    use crate::layers::ActivationKind::*;
    match kind {
        Relu => relu(x),
        Sigmoid => x.map(|v| 1.0 / (1.0 + (-v).exp())),
        Tanh => x.map(|v| v.tanh()),
        Linear => x.clone(),
    }
}

/// Eval-mode int8 forward. md layers quantize their input per instance
/// (symmetric, per-tensor scale) and accumulate in integers via
/// [`md_dot_q8`]; everything else runs in float.
pub fn forward_quantized(
    spec: &NetworkSpec,
    qstate: &QuantizedState,
    batch: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    if qstate.layers.len() != spec.layers.len() {
        return Err(Error::Internal("quantized state does not match spec".into()));
    }
    let mut cur = batch.clone();
    for (cfg, layer) in spec.layers.iter().zip(&qstate.layers) {
        cur = match (cfg, layer) {
            (
                &LayerConfig::Dense { .. },
                QuantizedLayer::MdAffine { q_weights, shape, scale, bias, alpha },
            ) => {
                let b = cur.shape()[0];
                let f = cur.len() / b;
                let x = cur.clone().reshape(&[b, f])?;
                let units = shape[0];
                if shape[1] != f {
                    return Err(err_fmt!(Shape, "quantized dense expects {} inputs, got {f}", shape[1]));
                }
                let mut out = vec![0.0f32; b * units];
                for bi in 0..b {
                    let row = &x.data()[bi * f..(bi + 1) * f];
                    let (qx, sx) = quantize_symmetric_q8(row);
                    for j in 0..units {
                        let s = md_dot_q8(&q_weights[j * f..(j + 1) * f], &qx, *scale, sx)? as f32;
                        let a = alpha.as_ref().map_or(1.0, |al| al.data()[j]);
                        out[bi * units + j] = a * s + bias.data()[j];
                    }
                }
                Tensor::from_data(&[b, units], out)?
            }
            (
                &LayerConfig::Conv1d { padding, .. },
                QuantizedLayer::MdAffine { q_weights, shape, scale, bias, alpha },
            ) => {
                let (k, l, c) = (shape[0], shape[1], shape[2]);
                let x = match padding {
                    Padding::Valid => cur.clone(),
                    Padding::Same => pad_same(&cur, l)?,
                };
                let (b, tp, cc) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                if cc != c {
                    return Err(err_fmt!(Shape, "quantized conv expects {c} channels, got {cc}"));
                }
                let t_out = tp - l + 1;
                let win = l * c;
                let mut out = vec![0.0f32; b * t_out * k];
                for bi in 0..b {
                    let map = &x.data()[bi * tp * c..(bi + 1) * tp * c];
                    let (qx, sx) = quantize_symmetric_q8(map);
                    for ti in 0..t_out {
                        let base = ti * c;
                        let qwin = &qx[base..base + win];
                        for ki in 0..k {
                            let s = md_dot_q8(&q_weights[ki * win..(ki + 1) * win], qwin, *scale, sx)? as f32;
                            let a = alpha.as_ref().map_or(1.0, |al| al.data()[ki]);
                            out[(bi * t_out + ti) * k + ki] = a * s + bias.data()[ki];
                        }
                    }
                }
                Tensor::from_data(&[b, t_out, k], out)?
            }
            (&LayerConfig::Maxpool1d { pool, stride }, QuantizedLayer::Float(_)) => {
                max_pool(&cur, pool, stride)?.0
            }
            (&LayerConfig::GlobalAvgPool, QuantizedLayer::Float(_)) => global_avg_pool(&cur)?,
            (&LayerConfig::Batchnorm, QuantizedLayer::Float(LayerParams::BatchNorm(p))) => {
                batchnorm_forward(&cur, p, false, BN_MOMENTUM, BN_EPS)?.0
            }
            (&LayerConfig::Dropout { .. }, QuantizedLayer::Float(_)) => cur,
            (&LayerConfig::Activation { activation }, QuantizedLayer::Float(_)) => {
                apply_activation(&cur, activation)
            }
            (
                &LayerConfig::Dense { md: false, .. } | &LayerConfig::Conv1d { md: false, .. },
                QuantizedLayer::Float(LayerParams::Affine(_)),
            ) => {
                return Err(Error::Internal(
                    "regular affine layers inside a quantized md network are not supported; \
                     quantize an md network"
                        .into(),
                ))
            }
            _ => return Err(Error::Internal("quantized layer/spec mismatch".into())),
        };
    }
    // Final regular linear layer in float.
    let b = cur.shape()[0];
    let f = cur.len() / b;
    let x = cur.reshape(&[b, f])?;
    let units = qstate.output.weights.shape()[0];
    let w = qstate.output.weights.data();
    let mut out = vec![0.0f32; b * units];
    for bi in 0..b {
        for j in 0..units {
            let mut acc = 0.0f32;
            for i in 0..f {
                acc += w[j * f + i] * x.data()[bi * f + i];
            }
            out[bi * units + j] = acc + qstate.output.bias.data()[j];
        }
    }
    Tensor::from_data(&[b, units], out)
}

fn pad_same(x: &Tensor<f32>, kernel_len: usize) -> Result<Tensor<f32>> {
    let (b, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let pad_left = (kernel_len - 1) / 2;
    let tp = t + kernel_len - 1;
    let mut data = vec![0.0f32; b * tp * c];
    for bi in 0..b {
        for ti in 0..t {
            let src = (bi * t + ti) * c;
            let dst = (bi * tp + ti + pad_left) * c;
            data[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
        }
    }
    Tensor::from_data(&[b, tp, c], data)
}

// ---------------------------------------------------------------------------
// Compressed weight file codec
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"ADNC";
const VERSION: u32 = 1;

fn write_u64(out: &mut impl Write, v: u64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_f32(out: &mut impl Write, v: f32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_f32(input: &mut impl Read) -> Result<f32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(f32::from_le_bytes(buf))
}

/// 2-bit codes per weight: 0 = kept, 1 = +1, 2 = -1, 3 = zero sign.
/// The accounting for compression rates still uses the 1-bit estimate.
fn write_codes(out: &mut impl Write, p: &PrunedTensor) -> Result<()> {
    let mut it_sign = p.signs.iter();
    let mut byte = 0u8;
    let mut filled = 0;
    for (i, &kept) in p.kept.iter().enumerate() {
        let code: u8 = if kept {
            0
        } else {
            match it_sign.next() {
                Some(1) => 1,
                Some(-1) => 2,
                Some(0) => 3,
                other => return Err(err_fmt!(Codec, "bad sign {other:?}")),
            }
        };
        byte |= code << (filled * 2);
        filled += 1;
        if filled == 4 || i + 1 == p.kept.len() {
            out.write_all(&[byte])?;
            byte = 0;
            filled = 0;
        }
    }
    Ok(())
}

fn read_codes(input: &mut impl Read, n: usize) -> Result<(Vec<bool>, Vec<i8>)> {
    let n_bytes = n.div_ceil(4);
    let mut bytes = vec![0u8; n_bytes];
    input.read_exact(&mut bytes)?;
    let mut kept = Vec::with_capacity(n);
    let mut signs = Vec::new();
    for i in 0..n {
        let code = (bytes[i / 4] >> ((i % 4) * 2)) & 0b11;
        match code {
            0 => kept.push(true),
            1 => {
                kept.push(false);
                signs.push(1);
            }
            2 => {
                kept.push(false);
                signs.push(-1);
            }
            _ => {
                kept.push(false);
                signs.push(0);
            }
        }
    }
    Ok((kept, signs))
}

fn write_tensor(out: &mut impl Write, t: &Tensor<f32>) -> Result<()> {
    t.write_to(out)
}

fn write_opt_tensor(out: &mut impl Write, t: &Option<Tensor<f32>>) -> Result<()> {
    match t {
        Some(t) => {
            out.write_all(&[1])?;
            t.write_to(out)
        }
        None => {
            out.write_all(&[0])?;
            Ok(())
        }
    }
}

fn read_opt_tensor(input: &mut impl Read) -> Result<Option<Tensor<f32>>> {
    let mut flag = [0u8; 1];
    input.read_exact(&mut flag)?;
    if flag[0] == 1 {
        Ok(Some(Tensor::read_from(input)?))
    } else {
        Ok(None)
    }
}

/// Serialize a compressed model together with its network spec.
pub fn write_compressed(
    out: &mut impl Write,
    spec: &NetworkSpec,
    compressed: &CompressedState,
) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let spec_json =
        serde_json::to_vec(spec).map_err(|e| err_fmt!(Codec, "spec to json: {e}"))?;
    write_u64(out, spec_json.len() as u64)?;
    out.write_all(&spec_json)?;
    out.write_all(&compressed.fraction.to_le_bytes())?;
    out.write_all(&[match compressed.magnitude_mode {
        ReplacementMagnitude::MeanBinarized => 0,
        ReplacementMagnitude::Unit => 1,
    }])?;
    write_u64(out, compressed.layers.len() as u64)?;
    for (idx, layer) in compressed.layers.iter().enumerate() {
        match layer {
            CompressedLayer::Pruned { weights, bias, alpha } => {
                out.write_all(&[0])?;
                write_u64(out, idx as u64)?;
                write_u64(out, weights.shape.len() as u64)?;
                for &d in &weights.shape {
                    write_u64(out, d as u64)?;
                }
                write_f32(out, weights.magnitude)?;
                write_codes(out, weights)?;
                write_u64(out, weights.intact.len() as u64)?;
                for &v in &weights.intact {
                    write_f32(out, v)?;
                }
                write_tensor(out, bias)?;
                write_opt_tensor(out, alpha)?;
            }
            CompressedLayer::Intact(LayerParams::Affine(p)) => {
                out.write_all(&[1])?;
                write_tensor(out, &p.weights)?;
                write_tensor(out, &p.bias)?;
                write_opt_tensor(out, &p.alpha)?;
            }
            CompressedLayer::Intact(LayerParams::BatchNorm(p)) => {
                out.write_all(&[2])?;
                write_tensor(out, &p.gamma)?;
                write_tensor(out, &p.beta)?;
                write_tensor(out, &p.running_mean)?;
                write_tensor(out, &p.running_var)?;
            }
            CompressedLayer::Intact(LayerParams::Stateless) => {
                out.write_all(&[3])?;
            }
        }
    }
    write_tensor(out, &compressed.output.weights)?;
    write_tensor(out, &compressed.output.bias)?;
    Ok(())
}

pub fn read_compressed(input: &mut impl Read) -> Result<(NetworkSpec, CompressedState)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Codec("not a compressed model file".into()));
    }
    let mut ver = [0u8; 4];
    input.read_exact(&mut ver)?;
    if u32::from_le_bytes(ver) != VERSION {
        return Err(err_fmt!(Codec, "unsupported version {}", u32::from_le_bytes(ver)));
    }
    let json_len = read_u64(input)? as usize;
    let mut json = vec![0u8; json_len];
    input.read_exact(&mut json)?;
    let spec: NetworkSpec =
        serde_json::from_slice(&json).map_err(|e| err_fmt!(Codec, "bad spec json: {e}"))?;
    let mut f64buf = [0u8; 8];
    input.read_exact(&mut f64buf)?;
    let fraction = f64::from_le_bytes(f64buf);
    let mut mode = [0u8; 1];
    input.read_exact(&mut mode)?;
    let magnitude_mode = match mode[0] {
        0 => ReplacementMagnitude::MeanBinarized,
        1 => ReplacementMagnitude::Unit,
        other => return Err(err_fmt!(Codec, "bad magnitude mode {other}")),
    };
    let n_layers = read_u64(input)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        layers.push(match tag[0] {
            0 => {
                let _idx = read_u64(input)?;
                let rank = read_u64(input)? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(read_u64(input)? as usize);
                }
                let n: usize = shape.iter().product();
                let magnitude = read_f32(input)?;
                let (kept, signs) = read_codes(input, n)?;
                let n_intact = read_u64(input)? as usize;
                if n_intact != kept.iter().filter(|&&k| k).count() {
                    return Err(Error::Codec("intact count mismatch".into()));
                }
                let mut intact = Vec::with_capacity(n_intact);
                for _ in 0..n_intact {
                    intact.push(read_f32(input)?);
                }
                let bias = Tensor::read_from(input)?;
                let alpha = read_opt_tensor(input)?;
                CompressedLayer::Pruned {
                    weights: PrunedTensor { shape, kept, intact, signs, magnitude },
                    bias,
                    alpha,
                }
            }
            1 => CompressedLayer::Intact(LayerParams::Affine(AffineParams {
                weights: Tensor::read_from(input)?,
                bias: Tensor::read_from(input)?,
                alpha: read_opt_tensor(input)?,
            })),
            2 => CompressedLayer::Intact(LayerParams::BatchNorm(
                crate::layers::BatchNormParams {
                    gamma: Tensor::read_from(input)?,
                    beta: Tensor::read_from(input)?,
                    running_mean: Tensor::read_from(input)?,
                    running_var: Tensor::read_from(input)?,
                },
            )),
            3 => CompressedLayer::Intact(LayerParams::Stateless),
            other => return Err(err_fmt!(Codec, "bad layer tag {other}")),
        });
    }
    let output = AffineParams {
        weights: Tensor::read_from(input)?,
        bias: Tensor::read_from(input)?,
        alpha: None,
    };
    Ok((spec, CompressedState { layers, output, fraction, magnitude_mode }))
}
