//! Pure dense-matrix kernels.
//!
//! These are the single source of truth for the forward math: the [`Tape`]
//! records them, and the no-grad inference paths call them directly, so the
//! traced and untraced forward passes stay bit-identical.
//!
//! [`Tape`]: super::Tape

use super::{Scalar, Tensor2};
use crate::error::{GeodistError, Result};

/// Epsilon used by per-row RMS normalization of activations.
pub const RMS_NORM_EPS: f64 = 1e-4;

/// Division guard for per-row L2 normalization of weights.
pub const L2_NORM_GUARD: f64 = 1e-12;

/// Normalizing divisor so `silu(x)/MP_SILU_DIV` has unit variance on
/// unit-Gaussian input.
pub const MP_SILU_DIV: f64 = 0.596;

fn shape_err(op: &'static str, a: &(usize, usize), b: &(usize, usize)) -> GeodistError {
    GeodistError::ShapeMismatch {
        op,
        details: format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1),
    }
}

/// C = A (n x k) * B (k x m).
pub fn matmul<S: Scalar>(a: &Tensor2<S>, b: &Tensor2<S>) -> Result<Tensor2<S>> {
    if a.cols() != b.rows() {
        return Err(shape_err("matmul", &a.shape(), &b.shape()));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut c = Tensor2::zeros(n, m);
    unsafe {
        S::gemm(
            n,
            k,
            m,
            S::one(),
            a.data().as_ptr(),
            k as isize,
            1,
            b.data().as_ptr(),
            m as isize,
            1,
            S::zero(),
            c.data_mut().as_mut_ptr(),
            m as isize,
            1,
        );
    }
    Ok(c)
}

/// C = A (n x k) * B^T where B is (m x k). The layout used by linear layers.
pub fn matmul_nt<S: Scalar>(a: &Tensor2<S>, b: &Tensor2<S>) -> Result<Tensor2<S>> {
    if a.cols() != b.cols() {
        return Err(shape_err("matmul_nt", &a.shape(), &b.shape()));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.rows());
    let mut c = Tensor2::zeros(n, m);
    unsafe {
        S::gemm(
            n,
            k,
            m,
            S::one(),
            a.data().as_ptr(),
            k as isize,
            1,
            b.data().as_ptr(),
            1,
            k as isize,
            S::zero(),
            c.data_mut().as_mut_ptr(),
            m as isize,
            1,
        );
    }
    Ok(c)
}

/// C = A^T * B where A is (k x n), B is (k x m).
pub fn matmul_tn<S: Scalar>(a: &Tensor2<S>, b: &Tensor2<S>) -> Result<Tensor2<S>> {
    if a.rows() != b.rows() {
        return Err(shape_err("matmul_tn", &a.shape(), &b.shape()));
    }
    let (n, k, m) = (a.cols(), a.rows(), b.cols());
    let mut c = Tensor2::zeros(n, m);
    unsafe {
        S::gemm(
            n,
            k,
            m,
            S::one(),
            a.data().as_ptr(),
            1,
            a.cols() as isize,
            b.data().as_ptr(),
            m as isize,
            1,
            S::zero(),
            c.data_mut().as_mut_ptr(),
            m as isize,
            1,
        );
    }
    Ok(c)
}

/// ca * A + cb * B, element-wise over same-shape operands.
pub fn lincomb<S: Scalar>(ca: S, a: &Tensor2<S>, cb: S, b: &Tensor2<S>) -> Result<Tensor2<S>> {
    if a.shape() != b.shape() {
        return Err(shape_err("lincomb", &a.shape(), &b.shape()));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ca * x + cb * y)
        .collect();
    Tensor2::from_vec(a.rows(), a.cols(), data)
}

pub fn add<S: Scalar>(a: &Tensor2<S>, b: &Tensor2<S>) -> Result<Tensor2<S>> {
    lincomb(S::one(), a, S::one(), b)
}

/// Element-wise product.
pub fn mul<S: Scalar>(a: &Tensor2<S>, b: &Tensor2<S>) -> Result<Tensor2<S>> {
    if a.shape() != b.shape() {
        return Err(shape_err("mul", &a.shape(), &b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data)
}

pub fn scale<S: Scalar>(a: &Tensor2<S>, c: S) -> Tensor2<S> {
    let data = a.data().iter().map(|&x| c * x).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("same length")
}

pub fn add_scalar<S: Scalar>(a: &Tensor2<S>, c: S) -> Tensor2<S> {
    let data = a.data().iter().map(|&x| x + c).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("same length")
}

/// Scale row i of `a` by `col[i]` (col is n x 1).
pub fn scale_rows<S: Scalar>(a: &Tensor2<S>, col: &Tensor2<S>) -> Result<Tensor2<S>> {
    if col.rows() != a.rows() || col.cols() != 1 {
        return Err(shape_err("scale_rows", &a.shape(), &col.shape()));
    }
    let mut out = a.clone();
    out.grad = None;
    let cols = a.cols();
    for (i, &c) in col.data().iter().enumerate() {
        for v in &mut out.data_mut()[i * cols..(i + 1) * cols] {
            *v = *v * c;
        }
    }
    Ok(out)
}

/// Add `row` (1 x m) to every row of `a`.
pub fn add_rows<S: Scalar>(a: &Tensor2<S>, row: &Tensor2<S>) -> Result<Tensor2<S>> {
    if row.cols() != a.cols() || row.rows() != 1 {
        return Err(shape_err("add_rows", &a.shape(), &row.shape()));
    }
    let mut out = a.clone();
    out.grad = None;
    let cols = a.cols();
    for i in 0..a.rows() {
        for (v, &r) in out.data_mut()[i * cols..(i + 1) * cols]
            .iter_mut()
            .zip(row.data())
        {
            *v = *v + r;
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// x * sigmoid(x), element-wise.
pub fn silu<S: Scalar>(a: &Tensor2<S>) -> Tensor2<S> {
    let data = a.data().iter().map(|&x| x * sigmoid(x)).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("same length")
}

/// d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x))).
#[inline]
pub fn silu_derivative<S: Scalar>(x: S) -> S {
    let s = sigmoid(x);
    s * (S::one() + x * (S::one() - s))
}

/// silu(x) / 0.596, the magnitude-preserving nonlinearity.
pub fn mp_silu<S: Scalar>(a: &Tensor2<S>) -> Tensor2<S> {
    let inv = S::from_f64(1.0 / MP_SILU_DIV);
    let data = a.data().iter().map(|&x| x * sigmoid(x) * inv).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("same length")
}

/// ((1 - t) * a + t * b) / sqrt((1 - t)^2 + t^2).
pub fn mp_sum<S: Scalar>(a: &Tensor2<S>, b: &Tensor2<S>, t_mix: f64) -> Result<Tensor2<S>> {
    let ca = 1.0 - t_mix;
    let cb = t_mix;
    let denom = (ca * ca + cb * cb).sqrt();
    lincomb(S::from_f64(ca / denom), a, S::from_f64(cb / denom), b)
}

pub fn cos<S: Scalar>(a: &Tensor2<S>) -> Tensor2<S> {
    let data = a.data().iter().map(|&x| x.cos()).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("same length")
}

/// Per-row RMS of a matrix.
pub fn row_rms<S: Scalar>(a: &Tensor2<S>) -> Vec<S> {
    let cols = S::from_f64(a.cols() as f64);
    (0..a.rows())
        .map(|i| {
            let s: S = a.row(i).iter().map(|&v| v * v).sum();
            (s / cols).sqrt()
        })
        .collect()
}

/// x / (rms(x) + eps), per row. Activation normalization.
pub fn rms_norm_rows<S: Scalar>(a: &Tensor2<S>) -> Tensor2<S> {
    let eps = S::from_f64(RMS_NORM_EPS);
    let rms = row_rms(a);
    let mut out = a.clone();
    out.grad = None;
    let cols = a.cols();
    for (i, r) in rms.iter().enumerate() {
        let inv = S::one() / (*r + eps);
        for v in &mut out.data_mut()[i * cols..(i + 1) * cols] {
            *v = *v * inv;
        }
    }
    out
}

/// w / (||w|| + guard), per row. Weight normalization used inside mp_linear.
pub fn l2_norm_rows<S: Scalar>(a: &Tensor2<S>) -> Tensor2<S> {
    let guard = S::from_f64(L2_NORM_GUARD);
    let mut out = a.clone();
    out.grad = None;
    let cols = a.cols();
    for i in 0..a.rows() {
        let n: S = a.row(i).iter().map(|&v| v * v).sum::<S>().sqrt();
        let inv = S::one() / (n + guard);
        for v in &mut out.data_mut()[i * cols..(i + 1) * cols] {
            *v = *v * inv;
        }
    }
    out
}

/// Row sums: (n x m) -> (n x 1).
pub fn sum_cols<S: Scalar>(a: &Tensor2<S>) -> Tensor2<S> {
    let data = (0..a.rows())
        .map(|i| a.row(i).iter().copied().sum())
        .collect();
    Tensor2::column(data)
}

/// Column sums: (n x m) -> (1 x m).
pub fn sum_rows<S: Scalar>(a: &Tensor2<S>) -> Tensor2<S> {
    let mut out = vec![S::zero(); a.cols()];
    for i in 0..a.rows() {
        for (o, &v) in out.iter_mut().zip(a.row(i)) {
            *o = *o + v;
        }
    }
    Tensor2::from_vec(1, a.cols(), out).expect("same length")
}

/// Mean over all entries -> 1x1.
pub fn mean_all<S: Scalar>(a: &Tensor2<S>) -> Tensor2<S> {
    let n = S::from_f64((a.rows() * a.cols()) as f64);
    let s: S = a.data().iter().copied().sum();
    Tensor2::scalar(s / n)
}

/// [A | B] along columns.
pub fn concat_cols<S: Scalar>(a: &Tensor2<S>, b: &Tensor2<S>) -> Result<Tensor2<S>> {
    if a.rows() != b.rows() {
        return Err(shape_err("concat_cols", &a.shape(), &b.shape()));
    }
    let cols = a.cols() + b.cols();
    let mut data = Vec::with_capacity(a.rows() * cols);
    for i in 0..a.rows() {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor2::from_vec(a.rows(), cols, data)
}
