//! Dense row-major matrices.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

/// Dense row-major matrix. Vectors are `n×1` or `1×n` matrices.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn scalar(value: T) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics when `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn column(values: &[T]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn row_vector(values: &[T]) -> Self {
        Self { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    pub fn diag_from(values: &[T]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col_vec(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Value of a `1×1` matrix.
    pub fn item(&self) -> T {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar matrix");
        self.data[0]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · rhs`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul shape mismatch: {}x{} · {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let b_row = &rhs.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn tr_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "tr_matmul shape mismatch");
        let (k, n, m) = (self.rows, self.cols, rhs.cols);
        let mut out = Self::zeros(n, m);
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &rhs.data[p * m..(p + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let o_row = &mut out.data[i * m..(i + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · rhsᵀ` without materialising the transpose.
    pub fn matmul_tr(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "matmul_tr shape mismatch");
        let (n, m) = (self.rows, rhs.rows);
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                out.data[i * m + j] = dot(a, rhs.row(j));
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    /// Elementwise combination of two same-shape matrices.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: T, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn add_diag(&self, c: T) -> Self {
        assert!(self.is_square(), "add_diag on non-square matrix");
        let mut out = self.clone();
        for i in 0..self.rows {
            out[(i, i)] += c;
        }
        out
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.data.len())
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// Sums over rows, giving a `1×cols` row vector.
    pub fn sum_rows(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, &x) in out.data.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        out
    }

    /// Sums over columns, giving a `rows×1` column vector.
    pub fn sum_cols(&self) -> Self {
        Self::from_fn(self.rows, 1, |i, _| self.row(i).iter().copied().sum())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Columns `start..end` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols, "column slice out of range");
        Self::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    /// Gathers rows by index.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    /// Gathers the sub-block at the given row and column indices.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])])
    }

    /// Horizontal concatenation. All parts must share a row count.
    pub fn hcat(parts: &[&Self]) -> Self {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            assert_eq!(p.rows, rows, "hcat row mismatch");
            for i in 0..rows {
                out.row_mut(i)[offset..offset + p.cols].copy_from_slice(p.row(i));
            }
            offset += p.cols;
        }
        out
    }

    /// `(A + Aᵀ)/2`.
    pub fn symmetrize(&self) -> Self {
        assert!(self.is_square(), "symmetrize on non-square matrix");
        let half = T::lit(0.5);
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)]) * half)
    }

    /// Largest absolute difference between `A` and `Aᵀ`.
    pub fn asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| U::lit(x.to_f64_lossy())).collect() }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[i * self.cols..(i + 1) * self.cols])?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 1.0);
        let b = Matrix::from_fn(4, 2, |i, j| (i as f64) - (j as f64) * 0.25);
        let c = a.matmul(&b);
        assert_eq!(c, a.transpose().tr_matmul(&b));
        assert_eq!(c, a.matmul_tr(&b.transpose()));
        assert_eq!(c[(1, 1)], dot(a.row(1), &b.col_vec(1)));
    }

    #[test]
    fn hcat_and_slice_are_inverse() {
        let a = Matrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let b = Matrix::from_fn(2, 1, |i, _| i as f64 * 10.0);
        let c = Matrix::hcat(&[&a, &b]);
        assert_eq!(c.slice_cols(0, 3), a);
        assert_eq!(c.slice_cols(3, 4), b);
    }

    #[test]
    fn reductions() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(a.sum(), 10.0);
        assert_eq!(a.sum_rows().as_slice(), &[4.0, 6.0]);
        assert_eq!(a.sum_cols().as_slice(), &[3.0, 7.0]);
        assert_eq!(a.trace(), 5.0);
        assert_eq!(a.asymmetry(), 1.0);
        assert_eq!(a.symmetrize()[(0, 1)], 2.5);
    }
}
