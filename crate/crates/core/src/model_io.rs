//! Model state files: a JSON network spec plus named weight tensors in the
//! little-endian tensor codec.

use crate::error::{err_fmt, Error, Result};
use crate::layers::{AffineParams, LayerParams, LayerState, NetworkSpec};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"ADNM";
const VERSION: u32 = 1;

fn named_tensors(state: &LayerState<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out = Vec::new();
    for (i, layer) in state.layers.iter().enumerate() {
        match layer {
            LayerParams::Affine(p) => {
                out.push((format!("layer{i}.weights"), &p.weights));
                out.push((format!("layer{i}.bias"), &p.bias));
                if let Some(a) = &p.alpha {
                    out.push((format!("layer{i}.alpha"), a));
                }
            }
            LayerParams::BatchNorm(p) => {
                out.push((format!("layer{i}.gamma"), &p.gamma));
                out.push((format!("layer{i}.beta"), &p.beta));
                out.push((format!("layer{i}.running_mean"), &p.running_mean));
                out.push((format!("layer{i}.running_var"), &p.running_var));
            }
            LayerParams::Stateless => {}
        }
    }
    out.push(("output.weights".into(), &state.output.weights));
    out.push(("output.bias".into(), &state.output.bias));
    out
}

pub fn write_model(out: &mut impl Write, spec: &NetworkSpec, state: &LayerState<f32>) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let spec_json = serde_json::to_vec(spec).map_err(|e| err_fmt!(Codec, "spec to json: {e}"))?;
    out.write_all(&(spec_json.len() as u64).to_le_bytes())?;
    out.write_all(&spec_json)?;
    let tensors = named_tensors(state);
    out.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, tensor) in tensors {
        let bytes = name.as_bytes();
        out.write_all(&(bytes.len() as u64).to_le_bytes())?;
        out.write_all(bytes)?;
        tensor.write_to(out)?;
    }
    Ok(())
}

pub fn read_model(input: &mut impl Read) -> Result<(NetworkSpec, LayerState<f32>)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Codec("not a model file".into()));
    }
    let mut ver = [0u8; 4];
    input.read_exact(&mut ver)?;
    if u32::from_le_bytes(ver) != VERSION {
        return Err(err_fmt!(Codec, "unsupported model version {}", u32::from_le_bytes(ver)));
    }
    let mut len8 = [0u8; 8];
    input.read_exact(&mut len8)?;
    let mut json = vec![0u8; u64::from_le_bytes(len8) as usize];
    input.read_exact(&mut json)?;
    let spec: NetworkSpec =
        serde_json::from_slice(&json).map_err(|e| err_fmt!(Codec, "bad spec json: {e}"))?;
    spec.shape_check()?;

    input.read_exact(&mut len8)?;
    let n_tensors = u64::from_le_bytes(len8) as usize;
    let mut tensors = std::collections::BTreeMap::new();
    for _ in 0..n_tensors {
        input.read_exact(&mut len8)?;
        let mut name = vec![0u8; u64::from_le_bytes(len8) as usize];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| err_fmt!(Codec, "tensor name: {e}"))?;
        tensors.insert(name, Tensor::<f32>::read_from(input)?);
    }

    // Rebuild the state skeleton from the spec, then fill tensors by name.
    let mut skeleton: LayerState<f32> =
        crate::layers::init_network(&spec, &mut crate::rng::Rng::new(0))?;
    let mut take = |name: String, expected: &[usize]| -> Result<Tensor<f32>> {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| err_fmt!(Codec, "missing tensor {name}"))?;
        if t.shape() != expected {
            return Err(err_fmt!(
                Codec,
                "tensor {name} has shape {:?}, expected {expected:?}",
                t.shape()
            ));
        }
        Ok(t)
    };
    for (i, layer) in skeleton.layers.iter_mut().enumerate() {
        match layer {
            LayerParams::Affine(p) => {
                p.weights = take(format!("layer{i}.weights"), p.weights.shape())?;
                p.bias = take(format!("layer{i}.bias"), p.bias.shape())?;
                if let Some(a) = &mut p.alpha {
                    *a = take(format!("layer{i}.alpha"), a.shape())?;
                }
            }
            LayerParams::BatchNorm(p) => {
                p.gamma = take(format!("layer{i}.gamma"), p.gamma.shape())?;
                p.beta = take(format!("layer{i}.beta"), p.beta.shape())?;
                p.running_mean = take(format!("layer{i}.running_mean"), p.running_mean.shape())?;
                p.running_var = take(format!("layer{i}.running_var"), p.running_var.shape())?;
            }
            LayerParams::Stateless => {}
        }
    }
    skeleton.output = AffineParams {
        weights: take("output.weights".into(), skeleton.output.weights.shape())?,
        bias: take("output.bias".into(), skeleton.output.bias.shape())?,
        alpha: None,
    };
    if let Some((name, _)) = tensors.into_iter().next() {
        return Err(err_fmt!(Codec, "unexpected tensor {name}"));
    }
    // Guard against corrupted payloads.
    for layer in &skeleton.layers {
        let finite = match layer {
            LayerParams::Affine(p) => p.weights.all_finite() && p.bias.all_finite(),
            LayerParams::BatchNorm(p) => {
                p.gamma.all_finite() && p.running_var.data().iter().all(|&v| v > 0.0)
            }
            LayerParams::Stateless => true,
        };
        if !finite {
            return Err(Error::Codec("non-finite parameters in model file".into()));
        }
    }
    Ok((spec, skeleton))
}

pub fn save_model(path: &Path, spec: &NetworkSpec, state: &LayerState<f32>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(&mut buf, spec, state)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(NetworkSpec, LayerState<f32>)> {
    let bytes = std::fs::read(path)?;
    read_model(&mut bytes.as_slice())
}

/// Batch-norm running variance must stay positive for a state to be
/// servable; exposed for handle validation at the FFI boundary.
pub fn validate_state(spec: &NetworkSpec, state: &LayerState<f32>) -> Result<()> {
    if state.layers.len() != spec.layers.len() {
        return Err(Error::Spec("state depth does not match spec".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::init_network;
    use crate::presets;
    use crate::rng::Rng;

    #[test]
    fn model_round_trip() {
        let spec = presets::ir_table1(true, Some(0.5));
        let state: LayerState<f32> = init_network(&spec, &mut Rng::new(12)).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &spec, &state).unwrap();
        let (spec2, state2) = read_model(&mut buf.as_slice()).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(state, state2);
    }

    #[test]
    fn writes_are_deterministic() {
        let spec = presets::drift_mlp(true, 0.2);
        let state: LayerState<f32> = init_network(&spec, &mut Rng::new(3)).unwrap();
        let mut a = Vec::new();
        write_model(&mut a, &spec, &state).unwrap();
        let mut b = Vec::new();
        write_model(&mut b, &spec, &state).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_garbage() {
        let garbage = b"not a model".to_vec();
        assert!(read_model(&mut garbage.as_slice()).is_err());
    }
}
