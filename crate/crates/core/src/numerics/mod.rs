//! Small dense linear algebra for `d <= ~10`.
//!
//! Everything here is a pure function of its inputs. Eigenvalues come from
//! cyclic Jacobi rotations, which are slow for large `d` but deterministic and
//! accurate for the 3x3 information matrices this crate works with.

mod quadrature;

pub use quadrature::{gauss_hermite, gauss_legendre, QuadratureRule};

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math::{abs, ln, sqrt};
use crate::{Error, Result};

/// Relative pivot floor below which a matrix is reported as not positive definite.
pub const PD_RELATIVE_FLOOR: f64 = 1e-12;

/// Off-diagonal Frobenius norm, relative to the input norm, at which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Sweep budget for the Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 50;

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
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

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
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

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        Ok(Matrix::from_fn(self.rows, other.cols, |i, j| {
            (0..self.cols).map(|k| self.get(i, k) * other.get(k, j)).sum()
        }))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix::from_fn(self.rows, self.cols, |i, j| {
            self.get(i, j) - other.get(i, j)
        }))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(abs(v)))
    }

    pub fn frobenius(&self) -> f64 {
        sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        Ok(())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for i in 0..self.rows {
            list.entry(&&self.data[i * self.cols..(i + 1) * self.cols]);
        }
        list.finish()
    }
}

/// Symmetric matrix. Construction averages `a[i][j]` and `a[j][i]` so the
/// stored entries are exactly symmetric.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        let mut m = Self { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::DimensionMismatch {
                expected: m.rows,
                found: m.cols,
            });
        }
        Self::from_rows(m.rows, m.data.clone())
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be positive");
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        Self { dim, data }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self::from_fn(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.zip(other, |a, b| a - b)
    }

    /// `c1 * self + c2 * other`.
    pub fn combine(&self, c1: f64, other: &SymMatrix, c2: f64) -> Result<SymMatrix> {
        self.zip(other, |a, b| c1 * a + c2 * b)
    }

    fn zip(&self, other: &SymMatrix, f: impl Fn(f64, f64) -> f64) -> Result<SymMatrix> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(abs(v)))
    }

    pub fn frobenius(&self) -> f64 {
        sqrt(self.data.iter().map(|v| v * v).sum())
    }

    /// Congruence transform `M^T A M`.
    pub fn congruence(&self, m: &Matrix) -> Result<SymMatrix> {
        let prod = m.transpose().matmul(&self.to_matrix())?.matmul(m)?;
        SymMatrix::from_matrix(&prod)
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.to_matrix(), f)
    }
}

/// Eigenvalues sorted in descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenList(Vec<f64>);

impl EigenList {
    pub fn from_unsorted(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.first().copied().unwrap_or(f64::NAN)
    }

    pub fn min(&self) -> f64 {
        self.0.last().copied().unwrap_or(f64::NAN)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Lower-triangular `L` with `L L^T = a`.
pub fn cholesky(a: &SymMatrix) -> Result<Matrix> {
    let n = a.dim();
    let max_diag = (0..n).map(|i| a.get(i, i)).fold(f64::NEG_INFINITY, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return Err(Error::NotPositiveDefinite { pivot: 0 });
    }
    let floor = PD_RELATIVE_FLOOR * max_diag;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > floor) {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ljj = sqrt(d);
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// `ln det a` for SPD `a`, as `2 sum ln L_ii`.
pub fn log_det_spd(a: &SymMatrix) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * (0..a.dim()).map(|i| ln(l.get(i, i))).sum::<f64>())
}

/// Solves `a x = b` for SPD `a` and any number of right-hand-side columns.
pub fn solve_spd(a: &SymMatrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.rows(),
        });
    }
    let l = cholesky(a)?;
    let y = forward_substitute(&l, b);
    Ok(backward_substitute_transposed(&l, &y))
}

/// `L^-1 b` for lower-triangular `L`.
fn forward_substitute(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut y = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = y.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * y.get(k, c);
            }
            y.set(i, c, s / l.get(i, i));
        }
    }
    y
}

/// `L^-T y` for lower-triangular `L`.
fn backward_substitute_transposed(l: &Matrix, y: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = y.clone();
    for c in 0..y.cols() {
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in (i + 1)..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    x
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(a: &SymMatrix) -> Result<EigenList> {
    let n = a.dim();
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let mut m = a.as_slice().to_vec();
    let scale = a.frobenius();
    if scale == 0.0 {
        return Ok(EigenList::from_unsorted(vec![0.0; n]));
    }
    for sweep in 0..=JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m, n) <= JACOBI_TOLERANCE * scale {
            return Ok(EigenList::from_unsorted((0..n).map(|i| m[i * n + i]).collect()));
        }
        if sweep == JACOBI_MAX_SWEEPS {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, n, p, q);
            }
        }
    }
    Err(Error::NoConvergence {
        sweeps: JACOBI_MAX_SWEEPS,
    })
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[i * n + j] * m[i * n + j];
            }
        }
    }
    sqrt(s)
}

/// One Jacobi rotation annihilating `m[p][q]`.
fn rotate(m: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = m[p * n + q];
    if apq == 0.0 {
        return;
    }
    let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
    let t = if abs(theta) > 1e150 {
        0.5 / theta
    } else {
        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
        sign / (abs(theta) + sqrt(theta * theta + 1.0))
    };
    let c = 1.0 / sqrt(t * t + 1.0);
    let s = t * c;
    for k in 0..n {
        let akp = m[k * n + p];
        let akq = m[k * n + q];
        m[k * n + p] = c * akp - s * akq;
        m[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = m[p * n + k];
        let aqk = m[q * n + k];
        m[p * n + k] = c * apk - s * aqk;
        m[q * n + k] = s * apk + c * aqk;
    }
}

/// Eigenvalues of `a b^-1`, computed as those of `L^-1 a L^-T` with `b = L L^T`.
pub fn generalized_eigenvalues(a: &SymMatrix, b: &SymMatrix) -> Result<EigenList> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            found: a.dim(),
        });
    }
    let l = cholesky(b)?;
    let y = forward_substitute(&l, &a.to_matrix());
    let w = forward_substitute(&l, &y.transpose());
    sym_eigenvalues(&SymMatrix::from_matrix(&w)?)
}
