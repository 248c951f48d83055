//! Dense complex linear algebra kernels.
//!
//! Everything above this module talks to [`ComplexMatrix`] and the small
//! decomposition structs defined here; the factorizations themselves are
//! delegated to `faer`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Relative rank tolerance used throughout: `1e-12 * sigma_max * max(rows, cols)`.
pub const RANK_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DenseError {
    #[error("matrix has a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("matrix is numerically singular (condition estimate {cond_estimate:e})")]
    Singular { cond_estimate: f64 },
    #[error("empty matrix")]
    Empty,
    #[error("decomposition failed to converge: {0}")]
    NoConvergence(String),
}

pub type DenseResult<T> = Result<T, DenseError>;

/// Column-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    inner: Mat<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{}", self.rows(), self.cols())?;
        let show_r = self.rows().min(8);
        let show_c = self.cols().min(8);
        for i in 0..show_r {
            for j in 0..show_c {
                let z = self.get(i, j);
                write!(f, " {:+.4e}{:+.4e}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { inner: Mat::zeros(rows, cols) }
    }

    pub fn identity(n: usize) -> Self {
        Self { inner: Mat::identity(n, n) }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self { inner: Mat::from_fn(rows, cols, f) }
    }

    /// Builds a matrix from column-major data, rejecting NaN and infinities.
    pub fn from_col_major(rows: usize, cols: usize, data: &[C64]) -> DenseResult<Self> {
        if data.len() != rows * cols {
            return Err(DenseError::ShapeMismatch {
                context: format!("{} entries for a {}x{} matrix", data.len(), rows, cols),
            });
        }
        let m = Self::from_fn(rows, cols, |i, j| data[j * rows + i]);
        m.check_finite()?;
        Ok(m)
    }

    /// Builds a matrix from row slices, rejecting ragged input and non-finite values.
    pub fn from_rows(rows: &[Vec<C64>]) -> DenseResult<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(DenseError::ShapeMismatch { context: "ragged rows".into() });
        }
        let m = Self::from_fn(r, c, |i, j| rows[i][j]);
        m.check_finite()?;
        Ok(m)
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> DenseResult<Self> {
        let cplx: Vec<Vec<C64>> =
            rows.iter().map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect()).collect();
        Self::from_rows(&cplx)
    }

    pub fn diag(values: &[C64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { C64::new(0.0, 0.0) })
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| C64::new(if i == j { values[i] } else { 0.0 }, 0.0))
    }

    pub fn column(v: &[C64]) -> Self {
        Self::from_fn(v.len(), 1, |i, _| v[i])
    }

    pub fn from_mat(inner: Mat<C64>) -> Self {
        Self { inner }
    }

    pub fn check_finite(&self) -> DenseResult<()> {
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                let z = self.get(i, j);
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(DenseError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.check_finite().is_ok()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.inner[(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, z: C64) {
        self.inner[(i, j)] = z;
    }

    pub fn mat(&self) -> &Mat<C64> {
        &self.inner
    }

    pub fn mat_mut(&mut self) -> &mut Mat<C64> {
        &mut self.inner
    }

    pub fn into_mat(self) -> Mat<C64> {
        self.inner
    }

    pub fn adjoint(&self) -> Self {
        Self { inner: self.inner.adjoint().to_owned() }
    }

    pub fn transpose(&self) -> Self {
        Self { inner: self.inner.transpose().to_owned() }
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols(), rhs.rows(), "matmul shape mismatch");
        Self { inner: &self.inner * &rhs.inner }
    }

    /// `self^H * rhs` without forming the adjoint.
    pub fn adjoint_mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows(), rhs.rows(), "adjoint_mul shape mismatch");
        Self { inner: self.inner.adjoint() * &rhs.inner }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| self.get(i, j) * s)
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// `self + s * I`.
    pub fn shift(&self, s: C64) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows().min(self.cols()) {
            out.inner[(i, i)] += s;
        }
        out
    }

    pub fn scale_rows(&self, d: &[f64]) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| self.get(i, j) * d[i])
    }

    pub fn scale_cols(&self, d: &[C64]) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| self.get(i, j) * d[j])
    }

    pub fn col_vec(&self, j: usize) -> Vec<C64> {
        (0..self.rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[C64]) {
        for (i, z) in v.iter().enumerate() {
            self.inner[(i, j)] = *z;
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn col_range(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows(), end - start, |i, j| self.get(i, start + j))
    }

    pub fn row_range(&self, start: usize, end: usize) -> Self {
        Self::from_fn(end - start, self.cols(), |i, j| self.get(start + i, j))
    }

    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Self {
        Self::from_fn(r1 - r0, c1 - c0, |i, j| self.get(r0 + i, c0 + j))
    }

    pub fn select_cols(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows(), idx.len(), |i, j| self.get(i, idx[j]))
    }

    pub fn hcat(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows(), rhs.rows(), "hcat row mismatch");
        let c = self.cols();
        Self::from_fn(self.rows(), c + rhs.cols(), |i, j| {
            if j < c {
                self.get(i, j)
            } else {
                rhs.get(i, j - c)
            }
        })
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows().min(self.cols())).map(|i| self.get(i, i)).sum()
    }

    pub fn norm_fro(&self) -> f64 {
        self.inner.norm_l2()
    }

    pub fn norm_max(&self) -> f64 {
        self.inner.norm_max()
    }

    /// Spectral norm (largest singular value). Zero for empty matrices.
    pub fn norm2(&self) -> f64 {
        if self.rows() == 0 || self.cols() == 0 {
            return 0.0;
        }
        if self.cols() == 1 || self.rows() == 1 {
            return self.norm_fro();
        }
        singular_values(self).map(|s| s[0]).unwrap_or(f64::NAN)
    }

    pub fn herm_part(&self) -> Self {
        Self::from_fn(self.rows(), self.cols(), |i, j| 0.5 * (self.get(i, j) + self.get(j, i).conj()))
    }
}

impl<'a> Add<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix { inner: &self.inner + &rhs.inner }
    }
}

impl<'a> Sub<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix { inner: &self.inner - &rhs.inner }
    }
}

impl<'a> Mul<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Thin singular value decomposition `M = U diag(s) V^H`, `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub s: Vec<f64>,
    pub v: ComplexMatrix,
}

pub fn svd(m: &ComplexMatrix) -> DenseResult<Svd> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(DenseError::Empty);
    }
    m.check_finite()?;
    let d = m
        .inner
        .thin_svd()
        .map_err(|e| DenseError::NoConvergence(format!("svd: {e:?}")))?;
    let s = d.S().column_vector().iter().map(|z| z.re).collect();
    Ok(Svd { u: ComplexMatrix { inner: d.U().to_owned() }, s, v: ComplexMatrix { inner: d.V().to_owned() } })
}

pub fn singular_values(m: &ComplexMatrix) -> DenseResult<Vec<f64>> {
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(Vec::new());
    }
    m.check_finite()?;
    m.inner
        .singular_values()
        .map_err(|e| DenseError::NoConvergence(format!("singular values: {e:?}")))
}

pub fn sigma_min(m: &ComplexMatrix) -> DenseResult<f64> {
    Ok(singular_values(m)?.last().copied().unwrap_or(0.0))
}

/// Numerical rank under the shared tolerance. The flag reports whether any
/// singular value sits within a factor of ten of the threshold.
pub fn numerical_rank(s: &[f64], rows: usize, cols: usize) -> (usize, bool) {
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = RANK_RTOL * smax * rows.max(cols) as f64;
    rank_with_tol(s, tol)
}

pub fn rank_with_tol(s: &[f64], tol: f64) -> (usize, bool) {
    let rank = s.iter().filter(|&&x| x > tol).count();
    let ambiguous = s.iter().any(|&x| x > tol / 10.0 && x < tol * 10.0);
    (rank, ambiguous)
}

/// Eigenvalues with unit-norm right eigenvectors, optionally paired left
/// eigenvectors (`w_i^H A = lambda_i w_i^H`, unit norm).
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<C64>,
    pub right: ComplexMatrix,
    pub left: Option<ComplexMatrix>,
    /// Set when the eigenvector matrix is numerically singular (defective or
    /// nearly defective input).
    pub defective: bool,
}

impl EigenDecomposition {
    /// Index of the eigenvalue closest to `z`.
    pub fn nearest(&self, z: C64) -> usize {
        let mut best = 0;
        for (i, l) in self.values.iter().enumerate() {
            if (l - z).norm() < (self.values[best] - z).norm() {
                best = i;
            }
        }
        best
    }
}

fn normalize_columns(m: &mut ComplexMatrix) {
    for j in 0..m.cols() {
        let nrm = vec_norm(&m.col_vec(j));
        if nrm > 0.0 {
            for i in 0..m.rows() {
                let z = m.get(i, j) / nrm;
                m.set(i, j, z);
            }
        }
    }
}

fn attach_left(right: &ComplexMatrix) -> (Option<ComplexMatrix>, bool) {
    let s = singular_values(right).unwrap_or_default();
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    if smax == 0.0 || smin <= 1e-13 * smax {
        return (None, true);
    }
    match inverse(right) {
        Ok(inv) => {
            let mut w = inv.adjoint();
            normalize_columns(&mut w);
            (Some(w), false)
        }
        Err(_) => (None, true),
    }
}

pub fn eig_dense(m: &ComplexMatrix, want_left: bool) -> DenseResult<EigenDecomposition> {
    if !m.is_square() {
        return Err(DenseError::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    if m.rows() == 0 {
        return Err(DenseError::Empty);
    }
    m.check_finite()?;
    let e = m.inner.eigen().map_err(|e| DenseError::NoConvergence(format!("eigen: {e:?}")))?;
    let values: Vec<C64> = e.S().column_vector().iter().copied().collect();
    let mut right = ComplexMatrix { inner: e.U().to_owned() };
    normalize_columns(&mut right);
    let (left, defective) = attach_left(&right);
    Ok(EigenDecomposition { values, right, left: if want_left { left } else { None }, defective })
}

pub fn eigenvalues(m: &ComplexMatrix) -> DenseResult<Vec<C64>> {
    if !m.is_square() {
        return Err(DenseError::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    m.check_finite()?;
    m.inner.eigenvalues().map_err(|e| DenseError::NoConvergence(format!("eigenvalues: {e:?}")))
}

/// Generalized problem `A x = lambda B x` with invertible `B`.
pub fn eig_generalized(a: &ComplexMatrix, b: &ComplexMatrix, want_left: bool) -> DenseResult<EigenDecomposition> {
    if !a.is_square() {
        return Err(DenseError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(DenseError::ShapeMismatch { context: "pencil sizes differ".into() });
    }
    a.check_finite()?;
    let s = singular_values(b)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    if smax == 0.0 || smin <= 1e-13 * smax {
        return Err(DenseError::Singular { cond_estimate: if smin > 0.0 { smax / smin } else { f64::INFINITY } });
    }
    if a.rows() == 1 {
        // the backend's workspace sizing trips on 1x1 pencils
        let one = ComplexMatrix::identity(1);
        let values = vec![a.get(0, 0) / b.get(0, 0)];
        let left = want_left.then(|| one.clone());
        return Ok(EigenDecomposition { values, right: one, left, defective: false });
    }
    let g = a
        .inner
        .generalized_eigen(b.inner.as_ref())
        .map_err(|e| DenseError::NoConvergence(format!("generalized eigen: {e:?}")))?;
    let sa = g.S_a().column_vector();
    let sb = g.S_b().column_vector();
    let values: Vec<C64> = (0..a.rows()).map(|i| sa[i] / sb[i]).collect();
    let mut right = ComplexMatrix { inner: g.U().to_owned() };
    normalize_columns(&mut right);
    // left vectors of the pencil: w^H A = lambda w^H B, i.e. columns of (B X)^{-H}
    let (left, defective) = match inverse(&b.matmul(&right)) {
        Ok(inv) if !attach_left(&right).1 => {
            let mut w = inv.adjoint();
            normalize_columns(&mut w);
            (Some(w), false)
        }
        _ => (None, true),
    };
    Ok(EigenDecomposition { values, right, left: if want_left { left } else { None }, defective })
}

/// Hermitian eigendecomposition, eigenvalues ascending.
pub fn hermitian_eig(m: &ComplexMatrix) -> DenseResult<(Vec<f64>, ComplexMatrix)> {
    if !m.is_square() {
        return Err(DenseError::NotSquare { rows: m.rows(), cols: m.cols() });
    }
    m.check_finite()?;
    let h = m.herm_part();
    let e = h
        .inner
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| DenseError::NoConvergence(format!("hermitian eigen: {e:?}")))?;
    let vals = e.S().column_vector().iter().map(|z| z.re).collect();
    Ok((vals, ComplexMatrix { inner: e.U().to_owned() }))
}

/// Reusable LU factorization with partial pivoting.
pub struct Lu {
    lu: faer::linalg::solvers::PartialPivLu<C64>,
    n: usize,
}

impl Lu {
    pub fn new(a: &ComplexMatrix) -> DenseResult<Self> {
        if !a.is_square() {
            return Err(DenseError::NotSquare { rows: a.rows(), cols: a.cols() });
        }
        if a.rows() == 0 {
            return Err(DenseError::Empty);
        }
        a.check_finite()?;
        let lu = a.inner.partial_piv_lu();
        let u = lu.U();
        let mut dmax = 0.0f64;
        let mut dmin = f64::INFINITY;
        for i in 0..a.rows() {
            let d = u[(i, i)].norm();
            dmax = dmax.max(d);
            dmin = dmin.min(d);
        }
        if !(dmin > 1e-14 * dmax) || !dmax.is_finite() {
            let cond_estimate = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
            return Err(DenseError::Singular { cond_estimate });
        }
        Ok(Self { lu, n: a.rows() })
    }

    pub fn solve(&self, b: &ComplexMatrix) -> DenseResult<ComplexMatrix> {
        if b.rows() != self.n {
            return Err(DenseError::ShapeMismatch {
                context: format!("rhs has {} rows, system has {}", b.rows(), self.n),
            });
        }
        let x = ComplexMatrix { inner: self.lu.solve(&b.inner) };
        x.check_finite().map_err(|_| DenseError::Singular { cond_estimate: f64::INFINITY })?;
        Ok(x)
    }

    pub fn inverse(&self) -> ComplexMatrix {
        ComplexMatrix { inner: self.lu.inverse() }
    }
}

pub fn solve_linear(a: &ComplexMatrix, b: &ComplexMatrix) -> DenseResult<ComplexMatrix> {
    Lu::new(a)?.solve(b)
}

pub fn inverse(a: &ComplexMatrix) -> DenseResult<ComplexMatrix> {
    let lu = Lu::new(a)?;
    let inv = lu.inverse();
    inv.check_finite().map_err(|_| DenseError::Singular { cond_estimate: f64::INFINITY })?;
    Ok(inv)
}

/// Orthonormal basis of the column span via thin QR (no rank check).
pub fn qr_q(m: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix { inner: m.inner.qr().compute_thin_Q() }
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &ComplexMatrix) -> DenseResult<ComplexMatrix> {
    if !a.is_square() {
        return Err(DenseError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    a.check_finite()?;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.rows();
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a.get(i, j).norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil() as i32 } else { 0 };
    let x = a.scale_real(0.5f64.powi(s));
    let id = ComplexMatrix::identity(n);
    let x2 = x.matmul(&x);
    let x4 = x2.matmul(&x2);
    let x6 = x4.matmul(&x2);
    let c = |k: usize| C64::new(B[k], 0.0);
    let u_inner = &(&x6.scale(c(13)) + &x4.scale(c(11))) + &x2.scale(c(9));
    let u_tail = &(&(&x6.scale(c(7)) + &x4.scale(c(5))) + &x2.scale(c(3))) + &id.scale(c(1));
    let u = x.matmul(&(&x6.matmul(&u_inner) + &u_tail));
    let v_inner = &(&x6.scale(c(12)) + &x4.scale(c(10))) + &x2.scale(c(8));
    let v_tail = &(&(&x6.scale(c(6)) + &x4.scale(c(4))) + &x2.scale(c(2))) + &id.scale(c(0));
    let v = &x6.matmul(&v_inner) + &v_tail;
    let mut r = solve_linear(&(&v - &u), &(&v + &u))?;
    for _ in 0..s {
        r = r.matmul(&r);
    }
    Ok(r)
}
