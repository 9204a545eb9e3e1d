//! Dense n-dimensional tensor in row-major layout.
//!
//! This is the carrier for signals, weights and gradients everywhere in the
//! crate. It is deliberately minimal: explicit shapes, same-shape binary
//! ops, a plain matrix product and seeded random fills. No broadcasting,
//! no views, no GPU.

use crate::error::{err_fmt, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use std::io::{Read, Write};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

/// Elementwise operation selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Abs,
    Sign,
    SqrtSigned,
    Tanh,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor shape must have at least one dimension".into()));
    }
    let mut len = 1usize;
    for &d in shape {
        if d == 0 {
            return Err(err_fmt!(Shape, "zero dimension in shape {shape:?}"));
        }
        len = len
            .checked_mul(d)
            .ok_or_else(|| err_fmt!(Shape, "shape {shape:?} overflows"))?;
    }
    Ok(len)
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![S::ZERO; len] })
    }

    pub fn filled(shape: &[usize], value: S) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; len] })
    }

    pub fn from_data(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(err_fmt!(
                Shape,
                "data length {} does not match shape {shape:?} (expected {len})",
                data.len()
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn from_vec(data: Vec<S>) -> Result<Self> {
        let n = data.len();
        Tensor::from_data(&[n], data)
    }

    /// I.i.d. normal draws, deterministic for a given generator state.
    pub fn gaussian(shape: &[usize], mean: f64, std: f64, rng: &mut Rng) -> Result<Self> {
        if std < 0.0 {
            return Err(err_fmt!(Parameter, "negative std {std}"));
        }
        let len = check_shape(shape)?;
        let data = (0..len).map(|_| S::from_f64(rng.normal(mean, std))).collect();
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(err_fmt!(
                Shape,
                "cannot reshape {:?} ({} elems) to {shape:?} ({len} elems)",
                self.shape,
                self.data.len()
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(err_fmt!(
                Shape,
                "shape mismatch {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn elementwise(op: ElementwiseOp, a: &Self, b: Option<&Self>) -> Result<Self> {
        fn binary<'a, S: Scalar>(b: Option<&'a Tensor<S>>) -> Result<&'a Tensor<S>> {
            b.ok_or_else(|| Error::Parameter("binary elementwise op needs two tensors".into()))
        }
        match op {
            ElementwiseOp::Add => a.zip(binary(b)?, |x, y| x + y),
            ElementwiseOp::Sub => a.zip(binary(b)?, |x, y| x - y),
            ElementwiseOp::Mul => a.zip(binary(b)?, |x, y| x * y),
            ElementwiseOp::Abs => Ok(a.map(|x| x.abs())),
            ElementwiseOp::Sign => Ok(a.map(|x| x.sgn())),
            ElementwiseOp::SqrtSigned => Ok(a.map(|x| x.sgn() * x.abs().sqrt())),
            ElementwiseOp::Tanh => Ok(a.map(|x| x.tanh())),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: S) -> Self {
        self.map(|v| v * c)
    }

    pub fn l1_norm(&self) -> S {
        self.data.iter().fold(S::ZERO, |acc, &v| acc + v.abs())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-major offset for a 2-d index.
    #[inline]
    pub fn idx2(&self, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.rank(), 2);
        r * self.shape[1] + c
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> S {
        self.data[self.idx2(r, c)]
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(a: &Self, b: &Self) -> Result<Self> {
        if a.rank() != 2 || b.rank() != 2 {
            return Err(err_fmt!(
                Shape,
                "matmul needs rank-2 tensors, got {:?} and {:?}",
                a.shape,
                b.shape
            ));
        }
        let (m, k) = (a.shape[0], a.shape[1]);
        let (k2, n) = (b.shape[0], b.shape[1]);
        if k != k2 {
            return Err(err_fmt!(
                Shape,
                "matmul inner dimensions differ: {:?} vs {:?}",
                a.shape,
                b.shape
            ));
        }
        let mut out = vec![S::ZERO; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.data[i * k + p];
                let row = &b.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &bv) in dst.iter_mut().zip(row) {
                    *d += av * bv;
                }
            }
        }
        Tensor::from_data(&[m, n], out)
    }

    /// Stack same-shape tensors along a new leading batch axis.
    pub fn stack(instances: &[&Tensor<S>]) -> Result<Tensor<S>> {
        let first = instances
            .first()
            .ok_or_else(|| Error::Data("cannot stack an empty list".into()))?;
        let mut shape = vec![instances.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * instances.len());
        for t in instances {
            if t.shape() != first.shape() {
                return Err(err_fmt!(
                    Shape,
                    "stack shape mismatch {:?} vs {:?}",
                    t.shape(),
                    first.shape()
                ));
            }
            data.extend_from_slice(t.data());
        }
        Tensor::from_data(&shape, data)
    }

    /// Convert elementwise between scalar widths.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

impl Tensor<f32> {
    /// Binary codec: rank and dimensions as little-endian u64, then the flat
    /// payload as little-endian f32.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(&(self.rank() as u64).to_le_bytes())?;
        for &d in &self.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut u64buf = [0u8; 8];
        input.read_exact(&mut u64buf)?;
        let rank = u64::from_le_bytes(u64buf) as usize;
        if rank == 0 || rank > 8 {
            return Err(err_fmt!(Codec, "unreasonable tensor rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            input.read_exact(&mut u64buf)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let len = check_shape(&shape)?;
        let mut data = Vec::with_capacity(len);
        let mut f32buf = [0u8; 4];
        for _ in 0..len {
            input.read_exact(&mut f32buf)?;
            data.push(f32::from_le_bytes(f32buf));
        }
        Tensor::from_data(&shape, data)
    }
}
