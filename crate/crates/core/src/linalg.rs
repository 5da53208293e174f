//! Minimal dense row-major matrix used for model parameters and gradients.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `out += x^T * self` for a row vector `x` of length `rows`.
    ///
    /// Row-major traversal: skips zero entries of `x`, which is what the
    /// embedding-scatter path relies on.
    pub fn vec_mat_accum(&self, x: &[T], out: &mut [T]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += xv * m;
            }
        }
    }

    /// `out[r] += dot(self.row(r), y)` for all rows.
    pub fn mat_vec_accum(&self, y: &[T], out: &mut [T]) {
        assert_eq!(y.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (&m, &yv) in self.row(r).iter().zip(y) {
                acc += m * yv;
            }
            *o += acc;
        }
    }

    /// Rank-one update `self += x * y^T`.
    pub fn outer_accum(&mut self, x: &[T], y: &[T]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        for (r, &xv) in x.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (m, &yv) in self.row_mut(r).iter_mut().zip(y) {
                *m += xv * yv;
            }
        }
    }
}

/// `sum(a * b)` for equal-length slices.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `out += c * src` elementwise.
pub fn axpy<T: Scalar>(c: T, src: &[T], out: &mut [T]) {
    assert_eq!(src.len(), out.len());
    for (o, &s) in out.iter_mut().zip(src) {
        *o += c * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_mat_matches_hand_product() {
        // [1 2; 3 4; 5 6], x = [1, 0, 2] -> x^T M = [11, 14]
        let m = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut out = vec![0.0; 2];
        m.vec_mat_accum(&[1.0, 0.0, 2.0], &mut out);
        assert_eq!(out, vec![11.0, 14.0]);
    }

    #[test]
    fn mat_vec_matches_hand_product() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut out = vec![0.0; 2];
        m.mat_vec_accum(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, vec![6.0, 15.0]);
    }

    #[test]
    fn outer_accumulates() {
        let mut m = Matrix::zeros(2, 2);
        m.outer_accum(&[1.0, 2.0], &[3.0, 4.0]);
        m.outer_accum(&[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(m.as_slice(), &[4.0, 5.0, 6.0, 8.0]);
    }
}
