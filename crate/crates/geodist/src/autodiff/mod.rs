//! Dense-matrix compute substrate with reverse-mode differentiation.
//!
//! Everything the denoiser and the vector-field baseline need runs on
//! [`Tensor2`] values recorded on a [`Tape`]. The substrate is generic over
//! the storage scalar: `f32` is the production precision, `f64` exists so
//! gradient checks can be run with enough headroom to compare against
//! central finite differences.

mod adam;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamParams, AdamState};
pub use tape::{Tape, TapeId};
pub use tensor::Tensor2;

use num_traits::Float;

/// Storage scalar for the compute substrate.
///
/// `f32` for training and inference, `f64` for finite-difference tests.
pub trait Scalar:
    Float
    + num_traits::NumAssign
    + Send
    + Sync
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// C = alpha * A (m x k) * B (k x n) + beta * C, row-major with explicit strides.
    ///
    /// Backed by `matrixmultiply`; single-threaded and deterministic.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
