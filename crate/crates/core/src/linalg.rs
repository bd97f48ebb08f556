//! Dense storage, symmetric linear operators and the Cholesky baseline.
//!
//! Everything the iterative code touches goes through [`LinearOperator`], so a
//! kernel matrix can be stored densely ([`DenseSymMatrix`]) or evaluated on
//! the fly (see [`crate::kernels::KernelOperator`]). Costs are expressed in
//! units of one dense `n x n` matrix-vector product.

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};

/// Row count above which dense products are split across threads.
const PAR_ROWS: usize = 192;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// General dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of the selected rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        let mut y = vec![0.0; self.rows];
        if self.rows >= PAR_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = dot(self.row(i), x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = dot(self.row(i), x);
            }
        }
        y
    }

    /// `Aᵀ x`
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_t dimension");
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut y);
            }
        }
        y
    }

    /// `A B`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        let cols = other.cols;
        out.data
            .par_chunks_mut(cols.max(1))
            .enumerate()
            .for_each(|(i, out_row)| {
                for (k, &a) in self.row(i).iter().enumerate() {
                    if a != 0.0 {
                        axpy(a, other.row(k), out_row);
                    }
                }
            });
        out
    }

    /// `Aᵀ A`, symmetric by construction.
    pub fn gram_t(&self) -> DenseSymMatrix {
        let m = self.cols;
        let mut out = DenseSymMatrix::zeros(m);
        for i in 0..m {
            for j in i..m {
                let s: f64 = (0..self.rows).map(|r| self.get(r, i) * self.get(r, j)).sum();
                out.set(i, j, s);
            }
        }
        out
    }

    /// `A Aᵀ`.
    pub fn gram_rows(&self) -> DenseSymMatrix {
        DenseSymMatrix::from_upper(self.rows, |i, j| dot(self.row(i), self.row(j)))
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data).sqrt()
    }

    /// Scale row `i` by `s[i]`.
    pub fn scale_rows(&mut self, s: &[f64]) {
        assert_eq!(s.len(), self.rows);
        for (i, &si) in s.iter().enumerate() {
            self.row_mut(i).iter_mut().for_each(|v| *v *= si);
        }
    }
}

/// Symmetric dense matrix, row-major, with every write mirrored across the
/// diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSymMatrix {
    inner: Matrix,
}

impl DenseSymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            inner: Matrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            inner: Matrix::identity(n),
        }
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from the upper triangle of `f`; `f(i, j)` is only called with `i <= j`.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Symmetrizes `(A + Aᵀ)/2`; errors if `a` is not square.
    pub fn from_matrix(a: &Matrix) -> Result<Self> {
        check_dim(a.rows(), a.cols())?;
        Ok(Self::from_upper(a.rows(), |i, j| 0.5 * (a.get(i, j) + a.get(j, i))))
    }

    pub fn n(&self) -> usize {
        self.inner.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.inner.set(i, j, v);
        self.inner.set(j, i, v);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inner.row(i)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    pub fn add_diagonal(&mut self, c: f64) {
        for i in 0..self.n() {
            let v = self.get(i, i) + c;
            self.inner.set(i, i, v);
        }
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.inner.matvec(x)
    }

    /// Principal submatrix on `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> DenseSymMatrix {
        DenseSymMatrix::from_upper(idx.len(), |a, b| self.get(idx[a], idx[b]))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.get(i, i)).sum()
    }
}

/// Anything that can multiply a vector by a symmetric positive-definite matrix.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// `y = A x`; both slices have length [`LinearOperator::dim`].
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Cost of one [`LinearOperator::apply`] in dense `n x n` matvec units.
    fn cost_per_apply(&self) -> f64 {
        1.0
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
    fn cost_per_apply(&self) -> f64 {
        (**self).cost_per_apply()
    }
}

impl LinearOperator for DenseSymMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n());
        assert_eq!(y.len(), self.n());
        if self.n() >= PAR_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = dot(self.row(i), x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = dot(self.row(i), x);
            }
        }
    }
}

/// `S A S + c I` for a diagonal scaling `S` (identity when absent).
///
/// With `S = I, c = λ` this is `K_y`; with `S = W^{1/2}, c = 1` it is the
/// Laplace matrix `B`.
#[derive(Clone, Debug)]
pub struct ScaledShifted<A> {
    pub inner: A,
    pub scale: Option<Vec<f64>>,
    pub shift: f64,
}

impl<A: LinearOperator> ScaledShifted<A> {
    pub fn shifted(inner: A, shift: f64) -> Self {
        Self {
            inner,
            scale: None,
            shift,
        }
    }

    pub fn new(inner: A, scale: Vec<f64>, shift: f64) -> Self {
        assert_eq!(scale.len(), inner.dim());
        Self {
            inner,
            scale: Some(scale),
            shift,
        }
    }
}

impl<A: LinearOperator> LinearOperator for ScaledShifted<A> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match &self.scale {
            None => {
                self.inner.apply(x, y);
            }
            Some(s) => {
                let sx: Vec<f64> = x.iter().zip(s).map(|(a, b)| a * b).collect();
                self.inner.apply(&sx, y);
                y.iter_mut().zip(s).for_each(|(yi, si)| *yi *= si);
            }
        }
        if self.shift != 0.0 {
            axpy(self.shift, x, y);
        }
    }

    fn cost_per_apply(&self) -> f64 {
        self.inner.cost_per_apply()
    }
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    n: usize,
    l: Matrix,
}

impl CholeskyFactor {
    pub fn factor(a: &DenseSymMatrix) -> Result<Self> {
        let n = a.n();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = l.row(j);
            let mut d = a.get(j, j) - dot(&lj[..j], &lj[..j]);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { row: j, pivot: d });
            }
            d = d.sqrt();
            l.set(j, j, d);
            // Columns below the pivot only depend on rows < j, so each row is independent.
            let (head, tail) = l.data.split_at_mut((j + 1) * n);
            let row_j = &head[j * n..j * n + j];
            let update = |(off, row): (usize, &mut [f64])| {
                let i = j + 1 + off;
                let s = a.get(i, j) - dot(&row[..j], row_j);
                row[j] = s / d;
            };
            if n - j > PAR_ROWS {
                tail.par_chunks_mut(n).enumerate().for_each(update);
            } else {
                tail.chunks_mut(n).enumerate().for_each(update);
            }
        }
        Ok(Self { n, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> &Matrix {
        &self.l
    }

    /// In-place `L⁻¹ v`.
    pub fn forward_in_place(&self, v: &mut [f64]) {
        for i in 0..self.n {
            let row = self.l.row(i);
            let s = v[i] - dot(&row[..i], &v[..i]);
            v[i] = s / row[i];
        }
    }

    /// In-place `L⁻ᵀ v`.
    pub fn backward_in_place(&self, v: &mut [f64]) {
        for i in (0..self.n).rev() {
            v[i] /= self.l.get(i, i);
            let vi = v[i];
            let row = self.l.row(i);
            for k in 0..i {
                v[k] -= row[k] * vi;
            }
        }
    }

    pub fn solve_lower(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, v.len())?;
        let mut x = v.to_vec();
        self.forward_in_place(&mut x);
        Ok(x)
    }

    /// `x` with `L Lᵀ x = v`.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, v.len())?;
        let mut x = v.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        Ok(x)
    }

    /// `A⁻¹ M` column by column.
    pub fn solve_matrix(&self, m: &Matrix) -> Result<Matrix> {
        check_dim(self.n, m.rows())?;
        let cols: Vec<Vec<f64>> = (0..m.cols())
            .into_par_iter()
            .map(|j| {
                let mut c: Vec<f64> = (0..m.rows()).map(|i| m.get(i, j)).collect();
                self.forward_in_place(&mut c);
                self.backward_in_place(&mut c);
                c
            })
            .collect();
        Ok(Matrix::from_fn(m.rows(), m.cols(), |i, j| cols[j][i]))
    }

    /// Explicit `A⁻¹`.
    pub fn inverse(&self) -> DenseSymMatrix {
        let inv = self
            .solve_matrix(&Matrix::identity(self.n))
            .expect("square identity");
        DenseSymMatrix::from_matrix(&inv).expect("square")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l.get(i, i).ln()).sum::<f64>()
    }

    /// `L Lᵀ`
    pub fn reconstruct(&self) -> DenseSymMatrix {
        DenseSymMatrix::from_upper(self.n, |i, j| {
            let k = i.min(j) + 1;
            dot(&self.l.row(i)[..k], &self.l.row(j)[..k])
        })
    }
}

impl LinearOperator for CholeskyFactor {
    fn dim(&self) -> usize {
        self.n
    }

    /// Applies `A⁻¹`.
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
        self.forward_in_place(y);
        self.backward_in_place(y);
    }
}
