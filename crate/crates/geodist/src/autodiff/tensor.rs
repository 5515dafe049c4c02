use crate::error::{GeodistError, Result};

use super::Scalar;

/// Dense row-major matrix. The universal value type of the substrate.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    /// Populated by [`super::Tape::backward`] for tensors that receive a gradient.
    pub grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor2<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
            grad: None,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GeodistError::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Tensor2 {
            rows,
            cols,
            data,
            grad: None,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor2 {
            rows,
            cols,
            data,
            grad: None,
        }
    }

    /// 1x1 tensor holding a single value.
    pub fn scalar(v: S) -> Self {
        Tensor2 {
            rows: 1,
            cols: 1,
            data: vec![v],
            grad: None,
        }
    }

    /// Column vector (n x 1).
    pub fn column(v: Vec<S>) -> Self {
        Tensor2 {
            rows: v.len(),
            cols: 1,
            data: v,
            grad: None,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Cast element-wise through `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor2<T> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            grad: None,
        }
    }
}
