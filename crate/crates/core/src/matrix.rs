//! Minimal dense row-major matrix.

use serde::{Deserialize, Serialize};

use crate::num::Scalar;

/// Row-major dense matrix. Row `i` of a feature matrix is the feature vector of
/// score element `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Builds a matrix from a flat row-major buffer.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length mismatch");
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally long rows. An empty iterator gives a 0×`cols` matrix.
    pub fn from_rows<R: AsRef<[T]>>(cols: usize, rows: impl IntoIterator<Item = R>) -> Self {
        let mut data = Vec::new();
        let mut n = 0;
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), cols, "ragged rows");
            data.extend_from_slice(row);
            n += 1;
        }
        Self { rows: n, cols, data }
    }

    /// `rows` copies of `row`.
    pub fn broadcast_row(rows: usize, row: &[T]) -> Self {
        Self::from_rows(row.len(), std::iter::repeat_n(row, rows))
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Rows in reverse order.
    pub fn reversed_rows(&self) -> Self {
        Self::from_rows(self.cols, (0..self.rows).rev().map(|i| self.row(i)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Nested `Vec` view, used for JSON export.
    pub fn to_nested(&self) -> Vec<Vec<T>> {
        self.row_iter().map(<[T]>::to_vec).collect()
    }

    /// Euclidean norm of column `j`.
    pub fn column_norm(&self, j: usize) -> T {
        self.row_iter().map(|r| r[j] * r[j]).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// `out += m · x` for a row-major `m` of shape `out.len() × x.len()`.
#[inline]
pub(crate) fn gemv_acc<T: Scalar>(out: &mut [T], m: &[T], x: &[T]) {
    let cols = x.len();
    debug_assert_eq!(m.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut acc = T::zero();
        for (&a, &b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += mᵀ · y` for a row-major `m` of shape `y.len() × out.len()`.
#[inline]
pub(crate) fn gemv_t_acc<T: Scalar>(out: &mut [T], m: &[T], y: &[T]) {
    let cols = out.len();
    debug_assert_eq!(m.len(), y.len() * cols);
    for (&yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if yi == T::zero() {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
}

/// `m += y · xᵀ`.
#[inline]
pub(crate) fn outer_acc<T: Scalar>(m: &mut [T], y: &[T], x: &[T]) {
    let cols = x.len();
    debug_assert_eq!(m.len(), y.len() * cols);
    for (&yi, row) in y.iter().zip(m.chunks_exact_mut(cols)) {
        if yi == T::zero() {
            continue;
        }
        for (a, &b) in row.iter_mut().zip(x) {
            *a += yi * b;
        }
    }
}
