//! Dense row-major matrix with the small set of operations the pipeline
//! needs, plus compensated reductions used wherever norms feed tolerances.

use crate::error::Error;
use crate::scalar::Scalar;
use crate::Result;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Wraps a row-major buffer; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer of {} elements cannot fill a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix by evaluating `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Number of rows.
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major element buffer.
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable row-major element buffer.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Consumes the matrix, returning its buffer.
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Element at `(r, c)`.
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    /// Mutable element at `(r, c)`.
    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.cols + c]
    }

    /// Row `r` as a slice.
    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Row `r` as a mutable slice.
    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column `c` copied into a vector.
    pub fn col(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    /// Transposed copy.
    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    /// Errors if any element is NaN or infinite. Applied at external input
    /// boundaries (tensor files, CLI paths); internal arithmetic is trusted.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        for (i, x) in self.data.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} has non-finite entry {} at flat index {} ({}x{})",
                    what, x, i, self.rows, self.cols
                )));
            }
        }
        Ok(())
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (k, &aik) in arow.iter().enumerate() {
                if aik == T::zero() {
                    continue;
                }
                let brow = rhs.row(k);
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o = *o + aik * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix product `self * rhsᵀ`, taking the right factor pre-transposed
    /// so both operands stream row-major.
    pub fn matmul_rhs_transposed(&self, rhs_t: &Self) -> Result<Self> {
        if self.cols != rhs_t.cols {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by transposed {}x{}",
                self.rows, self.cols, rhs_t.rows, rhs_t.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs_t.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..rhs_t.rows {
                *out.at_mut(i, j) = dot(arow, rhs_t.row(j));
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self * v`.
    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: vector of {} against {}x{}",
                v.len(),
                self.rows,
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// Transposed matrix-vector product `selfᵀ * v`.
    pub fn tr_matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::Dimension(format!(
                "tr_matvec: vector of {} against {}x{}",
                v.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i).iter()) {
                *o = *o + vi * a;
            }
        }
        Ok(out)
    }

    /// Frobenius norm, accumulated with compensated summation.
    pub fn frobenius_norm(&self) -> T {
        norm2(&self.data)
    }

    /// Largest absolute element (zero for an empty matrix).
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
    }

    /// Per-column mean of absolute values.
    pub fn column_abs_mean(&self) -> Vec<T> {
        let mut sums = vec![Kahan::<T>::default(); self.cols];
        for i in 0..self.rows {
            for (s, &x) in sums.iter_mut().zip(self.row(i).iter()) {
                s.add(x.abs());
            }
        }
        let denom = T::from_f64(self.rows as f64);
        sums.iter().map(|s| s.value() / denom).collect()
    }

    /// `self * diag(s)`: scales column `j` by `s[j]`.
    pub fn scale_columns(&self, s: &[T]) -> Result<Self> {
        if s.len() != self.cols {
            return Err(Error::Dimension(format!(
                "scale_columns: {} factors for {} columns",
                s.len(),
                self.cols
            )));
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            for (x, &f) in out.row_mut(i).iter_mut().zip(s.iter()) {
                *x = *x * f;
            }
        }
        Ok(out)
    }

    /// In-place rank-1 downdate `self -= sigma * u * vᵀ`.
    pub fn subtract_outer(&mut self, sigma: T, u: &[T], v: &[T]) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "subtract_outer: {}x{} update against {}x{}",
                u.len(),
                v.len(),
                self.rows,
                self.cols
            )));
        }
        for (i, &ui) in u.iter().enumerate() {
            let f = sigma * ui;
            for (x, &vj) in self.row_mut(i).iter_mut().zip(v.iter()) {
                *x = *x - f * vj;
            }
        }
        Ok(())
    }

    /// Elementwise difference `self - rhs`.
    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Dimension(format!(
                "sub: {}x{} minus {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Elementwise sum `self + rhs`.
    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Dimension(format!(
                "add: {}x{} plus {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Converts elementwise through f64 into another scalar type.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }
}

/// Applies `(A Aᵀ)^power · A · v` using only matrix-vector products
/// (`2*power + 1` of them), never forming the Gram matrix.
pub fn gram_apply<T: Scalar>(a: &Matrix<T>, v: &[T], power: usize) -> Result<Vec<T>> {
    let mut w = a.matvec(v)?;
    for _ in 0..power {
        let t = a.tr_matvec(&w)?;
        w = a.matvec(&t)?;
    }
    Ok(w)
}

/// Compensated (Kahan) accumulator.
#[derive(Debug, Clone, Copy)]
pub struct Kahan<T> {
    sum: T,
    carry: T,
}

impl<T: Scalar> Default for Kahan<T> {
    fn default() -> Self {
        Kahan {
            sum: T::zero(),
            carry: T::zero(),
        }
    }
}

impl<T: Scalar> Kahan<T> {
    /// Adds one term.
    #[inline]
    pub fn add(&mut self, x: T) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    /// Current compensated total.
    #[inline]
    pub fn value(&self) -> T {
        self.sum
    }
}

/// Compensated dot product.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = Kahan::default();
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc.add(x * y);
    }
    acc.value()
}

/// Compensated Euclidean norm.
pub fn norm2<T: Scalar>(a: &[T]) -> T {
    let mut acc = Kahan::default();
    for &x in a {
        acc.add(x * x);
    }
    acc.value().sqrt()
}
