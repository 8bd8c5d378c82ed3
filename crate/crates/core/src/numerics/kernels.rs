//! Reentrant dense kernels.
//!
//! Reductions always run left to right over the contracted index. The row
//! kernels here are the only implementations of their math: the tape and the
//! streaming session both call them, which is what makes incremental and full
//! forward passes agree bit-for-bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::real::{r, Real};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// `out += x · w` for `x: n×p`, `w: p×q`, `out: n×q`.
pub fn matmul_acc<T: Real>(x: &[T], n: usize, p: usize, w: &[T], q: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), n * p);
    debug_assert_eq!(w.len(), p * q);
    debug_assert_eq!(out.len(), n * q);
    for i in 0..n {
        let xr = &x[i * p..(i + 1) * p];
        let orow = &mut out[i * q..(i + 1) * q];
        for (k, &a) in xr.iter().enumerate() {
            let wr = &w[k * q..(k + 1) * q];
            for (o, &b) in orow.iter_mut().zip(wr) {
                *o += a * b;
            }
        }
    }
}

/// `out += xᵀ · dy` for `x: n×p`, `dy: n×q`, `out: p×q`.
pub fn matmul_tn_acc<T: Real>(x: &[T], n: usize, p: usize, dy: &[T], q: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), p * q);
    for i in 0..n {
        let xr = &x[i * p..(i + 1) * p];
        let dr = &dy[i * q..(i + 1) * q];
        for (k, &a) in xr.iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            let orow = &mut out[k * q..(k + 1) * q];
            for (o, &b) in orow.iter_mut().zip(dr) {
                *o += a * b;
            }
        }
    }
}

/// `out += a · bᵀ` for `a: n×p`, `b: m×p`, `out: n×m`.
pub fn matmul_nt_acc<T: Real>(a: &[T], n: usize, p: usize, b: &[T], m: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), n * m);
    for i in 0..n {
        let ar = &a[i * p..(i + 1) * p];
        for j in 0..m {
            out[i * m + j] += dot(ar, &b[j * p..(j + 1) * p]);
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Row-wise affine map: `out[i,j] = Σ_k x[i,k]·W[k,j] + b[j]`.
pub fn linear_rows<T: Real>(x: &[T], n: usize, w: &[T], p: usize, q: usize, b: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); n * q];
    matmul_acc(x, n, p, w, q, &mut out);
    if let Some(b) = b {
        for row in out.chunks_mut(q) {
            for (o, &bb) in row.iter_mut().zip(b) {
                *o += bb;
            }
        }
    }
    out
}

/// `x · W + b` on tensors.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, p) = (x.rows(), x.cols());
    if w.shape().len() != 2 || w.shape()[0] != p {
        return Err(shape_err("linear", format!("x {:?} · W {:?}", x.shape(), w.shape())));
    }
    let q = w.shape()[1];
    if let Some(b) = b {
        if b.len() != q {
            return Err(shape_err("linear", format!("bias {:?} for {} outputs", b.shape(), q)));
        }
    }
    let out = linear_rows(x.data(), n, w.data(), p, q, b.map(|b| b.data()));
    Ok(Tensor::matrix(n, q, out))
}

/// Per-row statistics of a layer norm: `(mean, 1/sqrt(var + eps))`.
#[inline]
pub fn row_moments<T: Real>(row: &[T], eps: T) -> (T, T) {
    let d = r::<T>(row.len() as f64);
    let mut s = T::zero();
    for &x in row {
        s += x;
    }
    let mean = s / d;
    let mut v = T::zero();
    for &x in row {
        let c = x - mean;
        v += c * c;
    }
    let var = v / d;
    (mean, T::one() / (var + eps).sqrt())
}

/// Normalizes one row into `out`; returns `(mean, rstd)`.
#[inline]
pub fn layer_norm_row<T: Real>(row: &[T], gamma: &[T], beta: &[T], eps: T, out: &mut [T]) -> (T, T) {
    let (mean, rstd) = row_moments(row, eps);
    for (((o, &x), &g), &b) in out.iter_mut().zip(row).zip(gamma).zip(beta) {
        *o = (x - mean) * rstd * g + b;
    }
    (mean, rstd)
}

/// Layer normalization with population variance.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let d = x.cols();
    if d == 0 || gamma.len() != d || beta.len() != d {
        return Err(shape_err(
            "layer_norm",
            format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.rows() {
        let (src, dst) = (x.row(i), &mut out.data_mut()[i * d..(i + 1) * d]);
        layer_norm_row(src, gamma.data(), beta.data(), eps, dst);
    }
    Ok(out)
}

/// In-place max-subtracted softmax.
#[inline]
pub fn softmax_in_place<T: Real>(x: &mut [T]) {
    let mut m = T::neg_infinity();
    for &v in x.iter() {
        m = m.max(v);
    }
    let mut s = T::zero();
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

pub fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `log Σ exp(x)` with max subtraction.
pub fn log_sum_exp<T: Real>(x: &[T]) -> T {
    let mut m = T::neg_infinity();
    for &v in x {
        m = m.max(v);
    }
    let mut s = T::zero();
    for &v in x {
        s += (v - m).exp();
    }
    m + s.ln()
}

/// `−log softmax(logits)[target]`.
pub fn cross_entropy<T: Real>(logits: &[T], target: usize) -> Result<T> {
    if target >= logits.len() {
        return Err(Error::Index {
            what: "cross_entropy target",
            index: target,
            len: logits.len(),
        });
    }
    Ok((log_sum_exp(logits) - logits[target]).max(T::zero()))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = r::<T>(GELU_C);
    let k = r::<T>(0.044715);
    r::<T>(0.5) * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = r::<T>(GELU_C);
    let k = r::<T>(0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + r::<T>(3.0) * k * x * x);
    r::<T>(0.5) * (T::one() + t) + r::<T>(0.5) * x * (T::one() - t * t) * du
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Key/value rows that precede the real keys of an attention row.
#[derive(Debug, Clone, Copy)]
pub struct PrefixRows<'a, T> {
    pub keys: &'a [T],
    pub values: &'a [T],
    pub count: usize,
    /// Added to every prefix attention logit.
    pub logit_bias: T,
}

/// Multi-head attention for one query row.
///
/// Keys are the optional prefix rows followed by the first `n_keys` rows of
/// `keys`/`values`. `probs` receives `heads × (prefix + n_keys)` attention
/// weights and `out` the concatenated head outputs. Returns the number of
/// multiply-adds performed.
#[allow(clippy::too_many_arguments)]
pub fn attend_row<T: Real>(
    q: &[T],
    prefix: Option<PrefixRows<'_, T>>,
    keys: &[T],
    values: &[T],
    n_keys: usize,
    heads: usize,
    out: &mut [T],
    probs: &mut [T],
) -> u64 {
    let d = q.len();
    let dh = d / heads;
    let np = prefix.map_or(0, |p| p.count);
    let width = np + n_keys;
    debug_assert_eq!(probs.len(), heads * width);
    let scale = T::one() / r::<T>(dh as f64).sqrt();
    out.iter_mut().for_each(|o| *o = T::zero());
    for h in 0..heads {
        let lo = h * dh;
        let hi = lo + dh;
        let qh = &q[lo..hi];
        let p = &mut probs[h * width..(h + 1) * width];
        if let Some(pre) = prefix {
            for j in 0..np {
                p[j] = dot(qh, &pre.keys[j * d + lo..j * d + hi]) * scale + pre.logit_bias;
            }
        }
        for j in 0..n_keys {
            p[np + j] = dot(qh, &keys[j * d + lo..j * d + hi]) * scale;
        }
        softmax_in_place(p);
        let oh = &mut out[lo..hi];
        if let Some(pre) = prefix {
            for j in 0..np {
                let w = p[j];
                for (o, &v) in oh.iter_mut().zip(&pre.values[j * d + lo..j * d + hi]) {
                    *o += w * v;
                }
            }
        }
        for j in 0..n_keys {
            let w = p[np + j];
            for (o, &v) in oh.iter_mut().zip(&values[j * d + lo..j * d + hi]) {
                *o += w * v;
            }
        }
    }
    2 * (width * d) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(x: &[f64], n: usize, p: usize, w: &[f64], q: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * q];
        for i in 0..n {
            for j in 0..q {
                for k in 0..p {
                    out[i * q + j] += x[i * p + k] * w[k * q + j];
                }
            }
        }
        out
    }

    #[test]
    fn linear_identity_and_zero_weights() {
        let x = Tensor::matrix(1, 2, vec![1.0f32, 2.0]);
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let y = linear(&x, &eye, Some(&Tensor::zeros(&[2]))).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let x = Tensor::matrix(3, 2, vec![0.3f32, -2.0, 5.0, 1.0, 7.0, 8.0]);
        let y = linear(&x, &Tensor::zeros(&[2, 2]), Some(&Tensor::full(&[2], 3.0))).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn linear_matches_naive_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = linear(&Tensor::matrix(4, 3, x.clone()), &Tensor::matrix(3, 5, w.clone()), None).unwrap();
        let oracle = naive_matmul(&x, 4, 3, &w, 5);
        for (a, b) in y.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_rejects_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::<f32>::zeros(&[2, 2]);
        assert!(matches!(linear(&x, &w, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn layer_norm_cases() {
        let x = Tensor::matrix(1, 3, vec![4.0f64, 4.0, 4.0]);
        let y = layer_norm(&x, &Tensor::full(&[3], 1.0), &Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]), 1e-5).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 2.0]);

        let x = Tensor::matrix(1, 2, vec![1.0f64, -1.0]);
        let y = layer_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 0.0).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::matrix(5, 8, (0..40).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>());
        let beta: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bmean = beta.iter().sum::<f64>() / 8.0;
        let y = layer_norm(&x, &Tensor::full(&[8], 1.0), &Tensor::row_vector(beta), 1e-5).unwrap();
        for i in 0..5 {
            let m = y.row(i).iter().sum::<f64>() / 8.0;
            assert!((m - bmean).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0f64, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[0.0f64, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let a = softmax(&[0.1f64, -2.0, 3.0]);
        let b = softmax(&[100.1f64, 98.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let big = softmax(&[1000.0f32, 0.0, -1000.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_cases() {
        let ce = cross_entropy(&[0.0f64; 4], 2).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        let ce = cross_entropy(&[0.0f64, 3f64.ln()], 1).unwrap();
        assert!((ce - (-(0.75f64).ln())).abs() < 1e-12);
        let lo = cross_entropy(&[0.0f64, 1.0, 0.5], 1).unwrap();
        let hi = cross_entropy(&[0.0f64, 0.5, 0.5], 1).unwrap();
        assert!(lo < hi);
        assert!(matches!(cross_entropy(&[0.0f32; 3], 3), Err(Error::Index { .. })));
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
