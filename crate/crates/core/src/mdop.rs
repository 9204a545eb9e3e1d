//! Multiplication-devoid (md) operator kernels.
//!
//! The md operation replaces the scalar product inside dot products with
//! `sgn(x*y) * (|x| + |y|)`: sign logic plus additions, no real-valued
//! multiplication. Self-application induces the l1 norm, `md_dot(x,x) =
//! 2*||x||_1`, exactly.
//!
//! The forward kernels use the hard sign. The step is not differentiable,
//! so the backward kernels differentiate a tanh-smoothed surrogate instead:
//! `md_smoothed(w,x) = tanh(a*w)*x + tanh(a*x)*w`, which recovers the hard
//! form as `a -> inf`. Training runs hard forward / smoothed backward.

use crate::error::{err_fmt, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sharpness of the tanh used by the backward kernels.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MdBackwardConfig {
    pub a: f64,
}

impl Default for MdBackwardConfig {
    fn default() -> Self {
        MdBackwardConfig { a: 10.0 }
    }
}

impl MdBackwardConfig {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(err_fmt!(Parameter, "md sharpness a must be positive, got {a}"));
        }
        Ok(MdBackwardConfig { a })
    }
}

/// `x (+) y = sgn(x*y) * (|x| + |y|)`.
#[inline]
pub fn md_scalar<S: Scalar>(x: S, y: S) -> S {
    if x == S::ZERO || y == S::ZERO {
        return S::ZERO;
    }
    let m = x.abs() + y.abs();
    if (x > S::ZERO) == (y > S::ZERO) {
        m
    } else {
        -m
    }
}

/// md dot product. The accumulation path is additions and conditional
/// negation only.
pub fn md_dot<S: Scalar>(w: &[S], x: &[S]) -> Result<S> {
    if w.len() != x.len() {
        return Err(err_fmt!(Shape, "md_dot length mismatch {} vs {}", w.len(), x.len()));
    }
    Ok(md_dot_unchecked(w, x))
}

#[inline]
pub(crate) fn md_dot_unchecked<S: Scalar>(w: &[S], x: &[S]) -> S {
    let mut acc = S::ZERO;
    for (&wi, &xi) in w.iter().zip(x) {
        if wi == S::ZERO || xi == S::ZERO {
            continue;
        }
        let m = wi.abs() + xi.abs();
        if (wi > S::ZERO) == (xi > S::ZERO) {
            acc += m;
        } else {
            acc -= m;
        }
    }
    acc
}

/// md dot product on int8 operands.
///
/// Operands live on symmetric grids `w_i * scale_w`, `x_i * scale_x`. Two
/// integer accumulators carry the |w| and |x| magnitude sums exactly
/// (additions only); the scales multiply in once at the end, in f64, so
/// the result matches the dequantized float oracle to double precision.
pub fn md_dot_q8(w: &[i8], x: &[i8], scale_w: f32, scale_x: f32) -> Result<f64> {
    if w.len() != x.len() {
        return Err(err_fmt!(Shape, "md_dot_q8 length mismatch {} vs {}", w.len(), x.len()));
    }
    if !(scale_w > 0.0 && scale_x > 0.0) {
        return Err(err_fmt!(Parameter, "scales must be positive, got {scale_w} and {scale_x}"));
    }
    let mut acc_w: i64 = 0;
    let mut acc_x: i64 = 0;
    for (&wi, &xi) in w.iter().zip(x) {
        if wi == 0 || xi == 0 {
            continue;
        }
        let aw = (wi as i64).abs();
        let ax = (xi as i64).abs();
        if (wi > 0) == (xi > 0) {
            acc_w += aw;
            acc_x += ax;
        } else {
            acc_w -= aw;
            acc_x -= ax;
        }
    }
    Ok(scale_w as f64 * acc_w as f64 + scale_x as f64 * acc_x as f64)
}

/// Valid-geometry 1-d md convolution.
///
/// `signal` is `[T, C]`, `kernels` is `[K, L, C]`; each output element is
/// the md dot product between one flattened `L*C` window and one kernel,
/// giving `[T', K]` with `T' = (T - L)/stride + 1`.
pub fn md_conv1d<S: Scalar>(signal: &Tensor<S>, kernels: &Tensor<S>, stride: usize) -> Result<Tensor<S>> {
    if signal.rank() != 2 || kernels.rank() != 3 {
        return Err(err_fmt!(
            Shape,
            "md_conv1d expects signal [T,C] and kernels [K,L,C], got {:?} and {:?}",
            signal.shape(),
            kernels.shape()
        ));
    }
    if stride == 0 {
        return Err(err_fmt!(Parameter, "stride must be positive"));
    }
    let (t, c) = (signal.shape()[0], signal.shape()[1]);
    let (k, l, kc) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if kc != c {
        return Err(err_fmt!(Shape, "kernel channels {kc} != signal channels {c}"));
    }
    if l > t {
        return Err(err_fmt!(Shape, "kernel length {l} exceeds signal length {t}"));
    }
    let t_out = (t - l) / stride + 1;
    let win = l * c;
    let mut out = vec![S::ZERO; t_out * k];
    let sig = signal.data();
    let ker = kernels.data();
    for ti in 0..t_out {
        let window = &sig[ti * stride * c..ti * stride * c + win];
        for ki in 0..k {
            let kernel = &ker[ki * win..(ki + 1) * win];
            out[ti * k + ki] = md_dot_unchecked(kernel, window);
        }
    }
    Tensor::from_data(&[t_out, k], out)
}

/// Differentiable surrogate `tanh(a*w)*x + tanh(a*x)*w`.
#[inline]
pub fn md_smoothed<S: Scalar>(w: S, x: S, cfg: MdBackwardConfig) -> S {
    let a = S::from_f64(cfg.a);
    (a * w).tanh() * x + (a * x).tanh() * w
}

/// `sech^2(v) = 1 - tanh^2(v)`, clamped to [0, 1].
#[inline]
fn sech_sq<S: Scalar>(v: S) -> S {
    let t = v.tanh();
    (S::ONE - t * t).maximum(S::ZERO).minimum(S::ONE)
}

/// Gradient of the smoothed surrogate with respect to each operand:
/// `d_w = tanh(a*x) + x*a*sech^2(a*w)` and symmetrically for `d_x`.
/// As `a -> inf` the tanh term becomes `sgn`, recovering the hard-sign
/// derivative `sgn(x) + 2*x*delta(w)` with the delta smoothed out.
#[inline]
pub fn md_grad<S: Scalar>(w: S, x: S, cfg: MdBackwardConfig) -> (S, S) {
    let a = S::from_f64(cfg.a);
    let d_w = (a * x).tanh() + x * a * sech_sq(a * w);
    let d_x = (a * w).tanh() + w * a * sech_sq(a * x);
    (d_w, d_x)
}

/// Backward pass through an md dot product for a scalar upstream gradient.
pub fn md_dot_backward<S: Scalar>(
    w: &[S],
    x: &[S],
    upstream: S,
    cfg: MdBackwardConfig,
) -> Result<(Vec<S>, Vec<S>)> {
    if w.len() != x.len() {
        return Err(err_fmt!(
            Shape,
            "md_dot_backward length mismatch {} vs {}",
            w.len(),
            x.len()
        ));
    }
    let mut grad_w = Vec::with_capacity(w.len());
    let mut grad_x = Vec::with_capacity(w.len());
    for (&wi, &xi) in w.iter().zip(x) {
        let (dw, dx) = md_grad(wi, xi, cfg);
        grad_w.push(upstream * dw);
        grad_x.push(upstream * dx);
    }
    Ok((grad_w, grad_x))
}

/// Per-tensor symmetric int8 quantization: scale = max|v|/127, zero-point
/// 0, round half away from zero. An all-zero tensor gets scale 1 so that
/// zeros round-trip exactly.
pub fn quantize_symmetric_q8(values: &[f32]) -> (Vec<i8>, f32) {
    let max_abs = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 };
    let q = values
        .iter()
        .map(|&v| {
            let r = (v / scale).abs().floor() + if (v / scale).abs().fract() >= 0.5 { 1.0 } else { 0.0 };
            let r = r.min(127.0);
            if v < 0.0 {
                -r as i8
            } else {
                r as i8
            }
        })
        .collect();
    (q, scale)
}

pub fn dequantize_q8(q: &[i8], scale: f32) -> Vec<f32> {
    q.iter().map(|&v| v as f32 * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn central_diff(mut f: impl FnMut(f64) -> f64, at: f64, h: f64) -> f64 {
        (f(at + h) - f(at - h)) / (2.0 * h)
    }

    #[test]
    fn md_scalar_examples() {
        assert_eq!(md_scalar(3.0f64, 0.1), 3.1);
        assert_eq!(md_scalar(123.0f64, 0.0), 0.0);
        assert_eq!(md_scalar(0.0f64, -4.0), 0.0);
        assert_eq!(md_scalar(-2.0f64, 3.0), -5.0);
    }

    #[test]
    fn md_scalar_matches_sign_form() {
        // sgn(x)y + sgn(y)x is the same operation.
        let mut rng = Rng::new(5);
        for _ in 0..1000 {
            let x = rng.normal(0.0, 2.0);
            let y = rng.normal(0.0, 2.0);
            let alt = x.sgn() * y + y.sgn() * x;
            assert!((md_scalar(x, y) - alt).abs() < 1e-12);
        }
    }

    #[test]
    fn md_dot_examples() {
        let x = [1.0f64, -2.0, 3.0];
        assert_eq!(md_dot(&x, &x).unwrap(), 12.0);
        assert_eq!(md_dot(&[1.0f64, -1.0], &[2.0, 3.0]).unwrap(), -1.0);
        assert_eq!(md_dot(&[5.0f64, -7.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(md_dot(&[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn md_dot_self_is_twice_l1_exactly() {
        let mut rng = Rng::new(17);
        for _ in 0..200 {
            let n = 1 + rng.below(64);
            let v: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 3.0)).collect();
            let l1: f64 = v.iter().map(|a| a.abs()).sum();
            assert_eq!(md_dot(&v, &v).unwrap(), 2.0 * l1);
        }
    }

    #[test]
    fn md_dot_q8_examples() {
        assert_eq!(md_dot_q8(&[0, 0, 0], &[0, 0, 0], 1.0, 1.0).unwrap(), 0.0);
        let single = md_dot_q8(&[127], &[127], 1.0, 1.0).unwrap();
        assert_eq!(single, md_scalar(127.0f64, 127.0));
        assert!(md_dot_q8(&[1], &[1, 2], 1.0, 1.0).is_err());
        assert!(md_dot_q8(&[1], &[1], 0.0, 1.0).is_err());
    }

    #[test]
    fn md_dot_q8_matches_dequantized_oracle() {
        let mut rng = Rng::new(23);
        for _ in 0..300 {
            let n = 64;
            let w: Vec<i8> = (0..n).map(|_| (rng.below(255) as i64 - 127) as i8).collect();
            let x: Vec<i8> = (0..n).map(|_| (rng.below(255) as i64 - 127) as i8).collect();
            let sw = rng.uniform(0.001, 0.1) as f32;
            let sx = rng.uniform(0.001, 0.1) as f32;
            let got = md_dot_q8(&w, &x, sw, sx).unwrap();
            let wf: Vec<f64> = w.iter().map(|&v| v as f64 * sw as f64).collect();
            let xf: Vec<f64> = x.iter().map(|&v| v as f64 * sx as f64).collect();
            let want = md_dot(&wf, &xf).unwrap();
            assert!(
                (got - want).abs() <= 1e-6 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn md_conv1d_zero_signal() {
        let signal = Tensor::<f64>::zeros(&[10, 2]).unwrap();
        let mut rng = Rng::new(1);
        let kernels = Tensor::<f64>::gaussian(&[4, 3, 2], 0.0, 1.0, &mut rng).unwrap();
        let out = md_conv1d(&signal, &kernels, 1).unwrap();
        assert_eq!(out.shape(), &[8, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn md_conv1d_degenerate_geometry() {
        let signal = Tensor::from_data(&[3, 1], vec![1.0f64, -2.0, 0.5]).unwrap();
        let kernels = Tensor::from_data(&[1, 3, 1], vec![0.5f64, 1.0, -1.0]).unwrap();
        let out = md_conv1d(&signal, &kernels, 1).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        let want = md_dot(signal.data(), kernels.data()).unwrap();
        assert_eq!(out.data()[0], want);
    }

    #[test]
    fn md_conv1d_matches_windowed_oracle() {
        // Table-1-like first conv: 32x1 signal, 16 kernels of 3x1.
        let mut rng = Rng::new(9);
        let signal = Tensor::<f64>::gaussian(&[32, 1], 0.0, 1.0, &mut rng).unwrap();
        let kernels = Tensor::<f64>::gaussian(&[16, 3, 1], 0.0, 1.0, &mut rng).unwrap();
        let out = md_conv1d(&signal, &kernels, 1).unwrap();
        assert_eq!(out.shape(), &[30, 16]);
        for t in 0..30 {
            let window = &signal.data()[t..t + 3];
            for k in 0..16 {
                let kernel = &kernels.data()[k * 3..(k + 1) * 3];
                let want = md_dot(kernel, window).unwrap();
                assert_eq!(out.data()[t * 16 + k], want);
            }
        }
    }

    #[test]
    fn md_conv1d_kernel_too_long() {
        let signal = Tensor::<f64>::zeros(&[2, 1]).unwrap();
        let kernels = Tensor::<f64>::zeros(&[1, 3, 1]).unwrap();
        assert!(md_conv1d(&signal, &kernels, 1).is_err());
    }

    #[test]
    fn md_smoothed_examples() {
        let cfg = MdBackwardConfig::default();
        assert_eq!(md_smoothed(0.0f64, 0.0, cfg), 0.0);
        // Direct formula oracle at a=10, w=3, x=0.1:
        // tanh(30)*0.1 + tanh(1)*3 = 0.1 + 2.2847824... = 2.3847824...
        let v = md_smoothed(3.0f64, 0.1, cfg);
        assert!((v - 2.3847824678672946).abs() < 1e-12, "{v}");
        // Sharp limit recovers the hard operator away from the origin.
        let sharp = MdBackwardConfig::new(1e6).unwrap();
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let w = rng.uniform(0.01, 2.0) * if rng.below(2) == 0 { 1.0 } else { -1.0 };
            let x = rng.uniform(0.01, 2.0) * if rng.below(2) == 0 { 1.0 } else { -1.0 };
            assert!((md_smoothed(w, x, sharp) - md_scalar(w, x)).abs() < 1e-6);
        }
    }

    #[test]
    fn md_grad_examples() {
        let cfg = MdBackwardConfig::default();
        let (dw, _) = md_grad(0.0f64, 1.0, cfg);
        // tanh(10) is 1 to within 1e-8, so d_w = 1 + 10*sech^2(0) = 11.
        assert!((dw - 11.0).abs() < 1e-7, "{dw}");
        let (dw, _) = md_grad(5.0f64, 1.0, cfg);
        assert!((dw - 1.0).abs() < 1e-8, "{dw}");
    }

    #[test]
    fn md_grad_matches_fd_of_smoothed() {
        let cfg = MdBackwardConfig::default();
        let mut rng = Rng::new(31);
        for _ in 0..1000 {
            let w = rng.normal(0.0, 1.0);
            let x = rng.normal(0.0, 1.0);
            let (dw, dx) = md_grad(w, x, cfg);
            let fd_w = central_diff(|v| md_smoothed(v, x, cfg), w, 1e-6);
            let fd_x = central_diff(|v| md_smoothed(w, v, cfg), x, 1e-6);
            assert!((dw - fd_w).abs() <= 1e-5 * dw.abs().max(1.0), "dw {dw} fd {fd_w}");
            assert!((dx - fd_x).abs() <= 1e-5 * dx.abs().max(1.0), "dx {dx} fd {fd_x}");
        }
    }

    #[test]
    fn md_dot_backward_zero_upstream() {
        let cfg = MdBackwardConfig::default();
        let (gw, gx) = md_dot_backward(&[1.0f64, -2.0], &[0.5, 0.25], 0.0, cfg).unwrap();
        assert!(gw.iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn md_dot_backward_single_element_is_scaled_md_grad() {
        let cfg = MdBackwardConfig::default();
        let (gw, gx) = md_dot_backward(&[0.3f64], &[-0.7], 2.5, cfg).unwrap();
        let (dw, dx) = md_grad(0.3f64, -0.7, cfg);
        assert_eq!(gw[0], 2.5 * dw);
        assert_eq!(gx[0], 2.5 * dx);
    }

    #[test]
    fn md_dot_backward_matches_fd() {
        let cfg = MdBackwardConfig::default();
        let mut rng = Rng::new(37);
        let n = 8;
        let w: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
        let smoothed_dot = |w: &[f64], x: &[f64]| -> f64 {
            w.iter().zip(x).map(|(&a, &b)| md_smoothed(a, b, cfg)).sum()
        };
        let (gw, gx) = md_dot_backward(&w, &x, 1.0, cfg).unwrap();
        for i in 0..n {
            let mut wp = w.clone();
            let fd = central_diff(
                |v| {
                    wp[i] = v;
                    smoothed_dot(&wp, &x)
                },
                w[i],
                1e-6,
            );
            assert!((gw[i] - fd).abs() <= 1e-5 * gw[i].abs().max(1.0));
            let mut xp = x.clone();
            let fd = central_diff(
                |v| {
                    xp[i] = v;
                    smoothed_dot(&w, &xp)
                },
                x[i],
                1e-6,
            );
            assert!((gx[i] - fd).abs() <= 1e-5 * gx[i].abs().max(1.0));
        }
    }

    #[test]
    fn quantize_examples() {
        // Values already on the int8 grid with scale 1 round-trip exactly.
        let vals = vec![-127.0f32, -1.0, 0.0, 1.0, 127.0];
        let (q, scale) = quantize_symmetric_q8(&vals);
        assert_eq!(scale, 1.0);
        assert_eq!(dequantize_q8(&q, scale), vals);
        // max |v| maps to +-127.
        let (q, s) = quantize_symmetric_q8(&[0.5, -2.0, 1.0]);
        assert_eq!(q[1], -127);
        assert!((s - 2.0 / 127.0).abs() < 1e-9);
        // all-zero tensor gets scale 1
        let (q, s) = quantize_symmetric_q8(&[0.0, 0.0]);
        assert_eq!(s, 1.0);
        assert_eq!(q, vec![0, 0]);
    }

    proptest::proptest! {
        #[test]
        fn prop_sign_preservation(x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let got = md_scalar(x, y);
            proptest::prop_assert_eq!(got.sgn(), x.sgn() * y.sgn());
        }

        #[test]
        fn prop_commutativity(x in -100.0f64..100.0, y in -100.0f64..100.0) {
            proptest::prop_assert_eq!(md_scalar(x, y), md_scalar(y, x));
        }

        #[test]
        fn prop_magnitude_dominates_product_in_unit_box(
            x in -1.0f64..1.0, y in -1.0f64..1.0
        ) {
            if x != 0.0 && y != 0.0 {
                proptest::prop_assert!(md_scalar(x, y).abs() >= (x * y).abs());
            }
        }

        #[test]
        fn prop_positive_scaling_keeps_sign(
            x in -10.0f64..10.0, y in -10.0f64..10.0, c in 0.001f64..100.0
        ) {
            proptest::prop_assert_eq!(md_scalar(c * x, c * y).sgn(), md_scalar(x, y).sgn());
        }
    }

}
