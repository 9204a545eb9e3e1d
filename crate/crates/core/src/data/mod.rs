//! Datasets and preprocessing for the three sensing tasks.

pub mod drift;
pub mod ir_synth;
pub mod mixtures;

pub use ir_synth::{gen_ir_dataset, IrSynthConfig};

use crate::error::{err_fmt, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Instances with integer labels and class metadata. Immutable after
/// construction; every instance has the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    instances: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    num_classes: usize,
    class_names: Vec<String>,
}

impl LabeledSet {
    pub fn new(
        instances: Vec<Tensor<f32>>,
        labels: Vec<usize>,
        num_classes: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if instances.len() != labels.len() {
            return Err(err_fmt!(
                Data,
                "{} instances vs {} labels",
                instances.len(),
                labels.len()
            ));
        }
        if num_classes == 0 {
            return Err(Error::Data("num_classes must be positive".into()));
        }
        if class_names.len() != num_classes {
            return Err(err_fmt!(
                Data,
                "{} class names for {num_classes} classes",
                class_names.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(err_fmt!(Label, "label {bad} outside [0, {num_classes})"));
        }
        if let Some(first) = instances.first() {
            if let Some(t) = instances.iter().find(|t| t.shape() != first.shape()) {
                return Err(err_fmt!(
                    Shape,
                    "instance shape {:?} differs from {:?}",
                    t.shape(),
                    first.shape()
                ));
            }
        }
        Ok(LabeledSet { instances, labels, num_classes, class_names })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Tensor<f32>] {
        &self.instances
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn instance_shape(&self) -> Option<&[usize]> {
        self.instances.first().map(|t| t.shape())
    }

    /// Subset by index, preserving class metadata.
    pub fn select(&self, idx: &[usize]) -> Result<LabeledSet> {
        let mut instances = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let inst = self
                .instances
                .get(i)
                .ok_or_else(|| err_fmt!(Data, "index {i} out of bounds"))?;
            instances.push(inst.clone());
            labels.push(self.labels[i]);
        }
        LabeledSet::new(instances, labels, self.num_classes, self.class_names.clone())
    }

    /// Instances of one class.
    pub fn of_class(&self, class: usize) -> Result<LabeledSet> {
        let idx: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        self.select(&idx)
    }

    /// Apply a per-instance transform.
    pub fn map_instances(&self, f: impl Fn(&Tensor<f32>) -> Tensor<f32>) -> LabeledSet {
        LabeledSet {
            instances: self.instances.iter().map(f).collect(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    /// Join several sets with identical class metadata.
    pub fn concat(sets: &[&LabeledSet]) -> Result<LabeledSet> {
        let first = sets.first().ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
        let mut instances = Vec::new();
        let mut labels = Vec::new();
        for set in sets {
            if set.num_classes != first.num_classes || set.class_names != first.class_names {
                return Err(Error::Data("cannot concatenate sets with different classes".into()));
            }
            instances.extend(set.instances.iter().cloned());
            labels.extend_from_slice(&set.labels);
        }
        LabeledSet::new(instances, labels, first.num_classes, first.class_names.clone())
    }

    /// One row per instance: label then the flattened signal values.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (inst, &label) in self.instances.iter().zip(&self.labels) {
            out.push_str(&label.to_string());
            for v in inst.data() {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Min-max normalization to [0,1]. A constant signal maps to all zeros and
/// is flagged as degenerate rather than treated as an error, because field
/// sensors can genuinely plateau.
pub fn minmax_normalize<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, bool) {
    let mut lo = x.data()[0];
    let mut hi = x.data()[0];
    for &v in x.data() {
        lo = lo.minimum(v);
        hi = hi.maximum(v);
    }
    if hi == lo {
        return (x.map(|_| S::ZERO), true);
    }
    let range = hi - lo;
    (x.map(|v| (v - lo) / range), false)
}

/// Contiguous temporal crop at a uniformly random offset. Works on `[T]`
/// and `[T, C]` tensors; channels are preserved.
pub fn random_crop<S: Scalar>(x: &Tensor<S>, crop_len: usize, rng: &mut Rng) -> Result<Tensor<S>> {
    let t = x.shape()[0];
    if crop_len > t {
        return Err(err_fmt!(Shape, "crop length {crop_len} exceeds signal length {t}"));
    }
    let offset = rng.below(t - crop_len + 1);
    crop_at(x, crop_len, offset)
}

/// Deterministic center crop, used at evaluation time.
pub fn center_crop<S: Scalar>(x: &Tensor<S>, crop_len: usize) -> Result<Tensor<S>> {
    let t = x.shape()[0];
    if crop_len > t {
        return Err(err_fmt!(Shape, "crop length {crop_len} exceeds signal length {t}"));
    }
    crop_at(x, crop_len, (t - crop_len) / 2)
}

fn crop_at<S: Scalar>(x: &Tensor<S>, crop_len: usize, offset: usize) -> Result<Tensor<S>> {
    match x.rank() {
        1 => {
            let data = x.data()[offset..offset + crop_len].to_vec();
            Tensor::from_data(&[crop_len], data)
        }
        2 => {
            let c = x.shape()[1];
            let data = x.data()[offset * c..(offset + crop_len) * c].to_vec();
            Tensor::from_data(&[crop_len, c], data)
        }
        r => Err(err_fmt!(Shape, "crop expects rank 1 or 2, got rank {r}")),
    }
}

/// `v -> sgn(v) * sqrt(|v|)` over every feature of every instance.
pub fn signed_sqrt_transform(set: &LabeledSet) -> LabeledSet {
    set.map_instances(|t| t.map(|v| v.sgn() * v.abs().sqrt()))
}

/// Exponential moving average of the differenced signal:
/// `y[k] = (1-alpha)*y[k-1] + alpha*(r[k]-r[k-1])`, `y[0] = 0`.
/// Returns the (max, min) of y over the whole signal.
pub fn ema_features<S: Scalar>(r: &Tensor<S>, alpha: f64) -> Result<(S, S)> {
    if r.rank() != 1 || r.len() < 2 {
        return Err(err_fmt!(Shape, "ema needs a rank-1 signal of length >= 2, got {:?}", r.shape()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(err_fmt!(Parameter, "ema alpha {alpha} outside (0, 1]"));
    }
    let a = S::from_f64(alpha);
    let one_minus = S::ONE - a;
    let mut y = S::ZERO;
    let mut max = S::ZERO;
    let mut min = S::ZERO;
    for k in 1..r.len() {
        y = one_minus * y + a * (r.data()[k] - r.data()[k - 1]);
        max = max.maximum(y);
        min = min.minimum(y);
    }
    Ok((max, min))
}
