//! Subspaces under a weighted inner product: orthonormal frames, containment
//! gaps, oblique and orthogonal projectors, nearest frames.

use faer::Side;

use crate::densekit::{
    self, hermitian_eig, singular_values, svd, ComplexMatrix, DenseError, C64,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubspaceError {
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error("columns are numerically dependent (sigma_min/sigma_max = {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("inner products differ: '{left}' vs '{right}'")]
    GramMismatch { left: String, right: String },
    #[error("gram matrix is not Hermitian positive definite: {0}")]
    BadGram(String),
    #[error("operator is not idempotent (defect {defect:e})")]
    NotIdempotent { defect: f64 },
    #[error("projector is trivial (zero or identity)")]
    TrivialProjector,
    #[error("cross-gram matrix is singular (sigma_min {sigma_min:e})")]
    SingularCrossGram { sigma_min: f64 },
    #[error("frame is not orthonormal (defect {defect:e})")]
    NotOrthonormal { defect: f64 },
}

pub type SubspaceResult<T> = Result<T, SubspaceError>;

#[derive(Debug, Clone)]
enum GramKind {
    Identity,
    Diagonal { d: Vec<f64>, sqrt_d: Vec<f64> },
    Dense { r: ComplexMatrix, r_inv: ComplexMatrix },
}

/// Hermitian positive definite matrix `G` defining `<x, y>_G = x^H G y`.
///
/// Stored with a factor `R` such that `G = R^H R`, so that `||x||_G = ||R x||`.
#[derive(Debug, Clone)]
pub struct Gram {
    matrix: ComplexMatrix,
    kind: GramKind,
    label: String,
}

impl Gram {
    pub fn identity(n: usize, label: impl Into<String>) -> Self {
        Self { matrix: ComplexMatrix::identity(n), kind: GramKind::Identity, label: label.into() }
    }

    pub fn diagonal(d: &[f64], label: impl Into<String>) -> SubspaceResult<Self> {
        if let Some(bad) = d.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
            return Err(SubspaceError::BadGram(format!("diagonal entry {bad}")));
        }
        Ok(Self {
            matrix: ComplexMatrix::diag_real(d),
            kind: GramKind::Diagonal { d: d.to_vec(), sqrt_d: d.iter().map(|x| x.sqrt()).collect() },
            label: label.into(),
        })
    }

    pub fn dense(g: &ComplexMatrix, label: impl Into<String>) -> SubspaceResult<Self> {
        if !g.is_square() {
            return Err(DenseError::NotSquare { rows: g.rows(), cols: g.cols() }.into());
        }
        g.check_finite()?;
        let asym = (g - &g.adjoint()).norm_fro();
        if asym > 1e-12 * g.norm_fro().max(1.0) {
            return Err(SubspaceError::BadGram(format!("Hermitian defect {asym:e}")));
        }
        let h = g.herm_part();
        let llt = h
            .mat()
            .llt(Side::Lower)
            .map_err(|e| SubspaceError::BadGram(format!("Cholesky failed: {e:?}")))?;
        let r = ComplexMatrix::from_mat(llt.L().adjoint().to_owned());
        let r_inv = densekit::inverse(&r)?;
        Ok(Self { matrix: h, kind: GramKind::Dense { r, r_inv }, label: label.into() })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, GramKind::Identity)
    }

    /// `G X`.
    pub fn apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        match &self.kind {
            GramKind::Identity => x.clone(),
            GramKind::Diagonal { d, .. } => x.scale_rows(d),
            GramKind::Dense { .. } => self.matrix.matmul(x),
        }
    }

    /// `R X` with `G = R^H R`.
    pub fn sqrt_apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        match &self.kind {
            GramKind::Identity => x.clone(),
            GramKind::Diagonal { sqrt_d, .. } => x.scale_rows(sqrt_d),
            GramKind::Dense { r, .. } => r.matmul(x),
        }
    }

    /// `R^{-1} X`.
    pub fn sqrt_inv_apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        match &self.kind {
            GramKind::Identity => x.clone(),
            GramKind::Diagonal { sqrt_d, .. } => {
                let inv: Vec<f64> = sqrt_d.iter().map(|s| 1.0 / s).collect();
                x.scale_rows(&inv)
            }
            GramKind::Dense { r_inv, .. } => r_inv.matmul(x),
        }
    }

    /// `X^H G Y`.
    pub fn inner(&self, x: &ComplexMatrix, y: &ComplexMatrix) -> ComplexMatrix {
        x.adjoint_mul(&self.apply(y))
    }

    pub fn vec_norm(&self, x: &[C64]) -> f64 {
        self.sqrt_apply(&ComplexMatrix::column(x)).norm_fro()
    }

    /// Norm of `X` viewed as a map from Euclidean coordinates into `(C^n, G)`.
    pub fn frame_norm(&self, x: &ComplexMatrix) -> f64 {
        self.sqrt_apply(x).norm2()
    }

    /// Operator norm of `Z` on `(C^n, G)`: `||R Z R^{-1}||_2`.
    pub fn op_norm(&self, z: &ComplexMatrix) -> f64 {
        let rinv = self.sqrt_inv_apply(&ComplexMatrix::identity(self.dim()));
        self.sqrt_apply(z).matmul(&rinv).norm2()
    }

    fn check_compatible(&self, other_label: &str) -> SubspaceResult<()> {
        if self.label != other_label {
            return Err(SubspaceError::GramMismatch { left: self.label.clone(), right: other_label.into() });
        }
        Ok(())
    }
}

/// Subspace represented by a frame that is orthonormal in the inner product
/// named by `gram_label`.
#[derive(Debug, Clone)]
pub struct Subspace {
    pub frame: ComplexMatrix,
    pub gram_label: String,
}

impl Subspace {
    pub fn dim(&self) -> usize {
        self.frame.cols()
    }

    pub fn ambient(&self) -> usize {
        self.frame.rows()
    }

    pub fn empty(n: usize, gram: &Gram) -> Self {
        Self { frame: ComplexMatrix::zeros(n, 0), gram_label: gram.label().to_string() }
    }
}

/// G-orthonormal frame for the column span of `raw`. Column `j` of the result
/// spans the same flag as columns `0..=j` of `raw`, with a positive real
/// triangular factor.
pub fn orthonormalize(raw: &ComplexMatrix, gram: &Gram) -> SubspaceResult<Subspace> {
    if raw.rows() != gram.dim() {
        return Err(SubspaceError::DimensionMismatch(format!(
            "frame has {} rows, inner product has dimension {}",
            raw.rows(),
            gram.dim()
        )));
    }
    if raw.cols() == 0 {
        return Ok(Subspace::empty(raw.rows(), gram));
    }
    raw.check_finite()?;
    if raw.cols() > raw.rows() {
        return Err(SubspaceError::RankDeficient { ratio: 0.0 });
    }
    let y = gram.sqrt_apply(raw);
    let s = singular_values(&y)?;
    let smax = s[0];
    let smin = *s.last().unwrap();
    if smax == 0.0 || smin <= 1e-12 * smax {
        return Err(SubspaceError::RankDeficient { ratio: if smax > 0.0 { smin / smax } else { 0.0 } });
    }
    let qr = y.mat().qr();
    let mut q = ComplexMatrix::from_mat(qr.compute_thin_Q());
    let r = qr.thin_R();
    for j in 0..q.cols() {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..q.rows() {
            let z = q.get(i, j) * phase;
            q.set(i, j, z);
        }
    }
    let frame = gram.sqrt_inv_apply(&q);
    Ok(Subspace { frame, gram_label: gram.label().to_string() })
}

/// Cosines of the principal angles between two subspaces (nonincreasing).
pub fn principal_cosines(m: &Subspace, n: &Subspace, gram: &Gram) -> SubspaceResult<Vec<f64>> {
    gram.check_compatible(&m.gram_label)?;
    gram.check_compatible(&n.gram_label)?;
    if m.dim() == 0 || n.dim() == 0 {
        return Ok(Vec::new());
    }
    let c = gram.inner(&m.frame, &n.frame);
    Ok(singular_values(&c)?.into_iter().map(|x| x.min(1.0)).collect())
}

/// One-sided containment gap `sup_{x in M, |x|=1} dist(x, N)`.
///
/// Evaluated from the residual `(I - Pi_N) M` rather than from cosines so
/// that small gaps keep full relative accuracy.
pub fn containment_gap(m: &Subspace, n: &Subspace, gram: &Gram) -> SubspaceResult<f64> {
    gram.check_compatible(&m.gram_label)?;
    gram.check_compatible(&n.gram_label)?;
    if m.ambient() != n.ambient() {
        return Err(SubspaceError::DimensionMismatch("subspaces live in different spaces".into()));
    }
    if m.dim() == 0 {
        return Ok(0.0);
    }
    if n.dim() < m.dim() {
        return Ok(1.0);
    }
    let coeff = gram.inner(&n.frame, &m.frame);
    let resid = &m.frame - &n.frame.matmul(&coeff);
    Ok(gram.frame_norm(&resid).clamp(0.0, 1.0))
}

/// `||(I - Pi_N) x||_G` for each column `x` of `u`, maximized over unit
/// combinations, i.e. the operator norm of the residual map.
pub fn residual_norm(u: &ComplexMatrix, n: &Subspace, gram: &Gram) -> f64 {
    if n.dim() == 0 {
        return gram.frame_norm(u);
    }
    let coeff = gram.inner(&n.frame, u);
    gram.frame_norm(&(u - &n.frame.matmul(&coeff)))
}

/// Projector onto `Ran(range)` along `Ran(test)^{perp_G}`:
/// `Z = R (T^H G R)^{-1} T^H G`.
pub fn oblique_projector(range: &Subspace, test: &Subspace, gram: &Gram) -> SubspaceResult<ComplexMatrix> {
    let core = oblique_core(range, test, gram)?;
    let tg = gram.apply(&test.frame).adjoint();
    Ok(range.frame.matmul(&core.solve(&tg)?))
}

/// `Z X` for the oblique projector without forming the ambient matrix.
pub fn oblique_apply(range: &Subspace, test: &Subspace, gram: &Gram, x: &ComplexMatrix) -> SubspaceResult<ComplexMatrix> {
    let core = oblique_core(range, test, gram)?;
    let rhs = gram.inner(&test.frame, x);
    Ok(range.frame.matmul(&core.solve(&rhs)?))
}

fn oblique_core(range: &Subspace, test: &Subspace, gram: &Gram) -> SubspaceResult<densekit::Lu> {
    gram.check_compatible(&range.gram_label)?;
    gram.check_compatible(&test.gram_label)?;
    if range.dim() != test.dim() {
        return Err(SubspaceError::DimensionMismatch(format!(
            "range has dimension {}, test space {}",
            range.dim(),
            test.dim()
        )));
    }
    if range.dim() == 0 {
        return Err(SubspaceError::DimensionMismatch("empty subspaces".into()));
    }
    let c = gram.inner(&test.frame, &range.frame);
    let s = singular_values(&c)?;
    let smin = *s.last().unwrap();
    if smin <= 1e-12 {
        return Err(SubspaceError::SingularCrossGram { sigma_min: smin });
    }
    Ok(densekit::Lu::new(&c)?)
}

/// G-orthogonal projector `S S^H G`.
pub fn orthogonal_projector(s: &Subspace, gram: &Gram) -> SubspaceResult<ComplexMatrix> {
    gram.check_compatible(&s.gram_label)?;
    Ok(s.frame.matmul(&gram.apply(&s.frame).adjoint()))
}

/// `(||Z||_G, ||I - Z||_G)` for a nontrivial idempotent `Z`.
pub fn projector_norms(z: &ComplexMatrix, gram: &Gram) -> SubspaceResult<(f64, f64)> {
    if !z.is_square() {
        return Err(DenseError::NotSquare { rows: z.rows(), cols: z.cols() }.into());
    }
    z.check_finite()?;
    let scale = z.norm_fro().max(1.0);
    let defect = (&z.matmul(z) - z).norm_fro();
    if defect > 1e-10 * scale {
        return Err(SubspaceError::NotIdempotent { defect });
    }
    let id = ComplexMatrix::identity(z.rows());
    let comp = &id - z;
    if z.norm_fro() <= 1e-12 || comp.norm_fro() <= 1e-12 {
        return Err(SubspaceError::TrivialProjector);
    }
    Ok((gram.op_norm(z), gram.op_norm(&comp)))
}

fn orthonormal_defect(f: &ComplexMatrix) -> f64 {
    (&f.adjoint_mul(f) - &ComplexMatrix::identity(f.cols())).norm2()
}

/// Given Euclidean-orthonormal frames `s` (dim s) and `t` (dim t >= s), an
/// orthonormal frame inside `Ran(t)` whose distance to `s` is at most
/// `sqrt(2)` times the containment gap of `Ran(s)` in `Ran(t)`.
pub fn nearest_frame(s: &ComplexMatrix, t: &ComplexMatrix) -> SubspaceResult<ComplexMatrix> {
    if s.rows() != t.rows() {
        return Err(SubspaceError::DimensionMismatch("frames live in different spaces".into()));
    }
    if s.cols() > t.cols() {
        return Err(SubspaceError::DimensionMismatch(format!(
            "source dimension {} exceeds target dimension {}",
            s.cols(),
            t.cols()
        )));
    }
    for f in [s, t] {
        if f.cols() > 0 {
            let d = orthonormal_defect(f);
            if d > 1e-10 {
                return Err(SubspaceError::NotOrthonormal { defect: d });
            }
        }
    }
    let (n, ds, dt) = (s.rows(), s.cols(), t.cols());
    if ds == 0 {
        return Ok(ComplexMatrix::zeros(n, 0));
    }

    let c = s.adjoint_mul(t);
    let dec = svd(&c)?;
    let z0 = dec.u.clone();
    let k = dec.s.iter().filter(|&&x| x >= 1.0 - 1e-10).count();

    // intersection directions, taken on the target side so they lie in Ran(t)
    let s0 = t.matmul(&dec.v.col_range(0, k));
    if k == ds {
        return Ok(s0.matmul(&z0.adjoint()));
    }
    let s1 = s.matmul(&z0.col_range(k, ds));

    let v0 = dec.v.col_range(0, k);
    let comp = &ComplexMatrix::identity(dt) - &v0.matmul(&v0.adjoint());
    let (_, evecs) = hermitian_eig(&comp)?;
    let t_hat = t.matmul(&evecs.col_range(k, dt));

    let m = t_hat.adjoint_mul(&s1);
    let d1 = svd(&m)?;
    let t1 = t_hat.matmul(&d1.u).matmul(&d1.v.adjoint());
    Ok(s0.hcat(&t1).matmul(&z0.adjoint()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn e(n: usize, i: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, 1, |r, _| re(if r == i { 1.0 } else { 0.0 }))
    }

    #[test]
    fn orthonormalize_rescales() {
        let g = Gram::identity(3, "E");
        let s = orthonormalize(&e(3, 0).scale_real(2.0), &g).unwrap();
        assert!((&s.frame - &e(3, 0)).norm_fro() < 1e-15);
    }

    #[test]
    fn orthonormalize_rejects_dependent_columns() {
        let g = Gram::identity(3, "E");
        let raw = e(3, 0).hcat(&e(3, 0).scale_real(3.0));
        assert!(matches!(orthonormalize(&raw, &g), Err(SubspaceError::RankDeficient { .. })));
    }

    #[test]
    fn gap_examples() {
        let g = Gram::identity(2, "E");
        let x = orthonormalize(&e(2, 0), &g).unwrap();
        let y = orthonormalize(&e(2, 1), &g).unwrap();
        let diag = orthonormalize(&ComplexMatrix::column(&[re(1.0), re(1.0)]), &g).unwrap();
        assert!((containment_gap(&x, &y, &g).unwrap() - 1.0).abs() < 1e-15);
        assert!((containment_gap(&x, &diag, &g).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(containment_gap(&x, &x, &g).unwrap(), 0.0);
    }

    #[test]
    fn gap_with_smaller_target_is_one() {
        let g = Gram::identity(3, "E");
        let big = orthonormalize(&e(3, 0).hcat(&e(3, 1)), &g).unwrap();
        let small = orthonormalize(&e(3, 0), &g).unwrap();
        assert_eq!(containment_gap(&big, &small, &g).unwrap(), 1.0);
        assert_eq!(containment_gap(&small, &big, &g).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_grams_are_rejected() {
        let g = Gram::identity(2, "H");
        let w = Gram::diagonal(&[1.0, 4.0], "V").unwrap();
        let a = orthonormalize(&e(2, 0), &g).unwrap();
        let b = orthonormalize(&e(2, 0), &w).unwrap();
        assert!(matches!(containment_gap(&a, &b, &g), Err(SubspaceError::GramMismatch { .. })));
    }

    #[test]
    fn oblique_projector_example() {
        let g = Gram::identity(2, "E");
        let range = orthonormalize(&e(2, 0), &g).unwrap();
        let test = orthonormalize(&ComplexMatrix::column(&[re(1.0), re(1.0)]), &g).unwrap();
        let z = oblique_projector(&range, &test, &g).unwrap();
        let want = ComplexMatrix::from_real_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!((&z - &want).norm_fro() < 1e-14);
        let (nz, nc) = projector_norms(&z, &g).unwrap();
        assert!((nz - 2f64.sqrt()).abs() < 1e-13 && (nc - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn orthogonal_test_space_is_rejected() {
        let g = Gram::identity(2, "E");
        let range = orthonormalize(&e(2, 0), &g).unwrap();
        let test = orthonormalize(&e(2, 1), &g).unwrap();
        assert!(matches!(oblique_projector(&range, &test, &g), Err(SubspaceError::SingularCrossGram { .. })));
    }

    #[test]
    fn weighted_gram_norms() {
        let g = Gram::dense(
            &ComplexMatrix::from_rows(&[vec![re(2.0), C64::new(0.5, 0.5)], vec![C64::new(0.5, -0.5), re(3.0)]]).unwrap(),
            "G",
        )
        .unwrap();
        let x = [C64::new(1.0, -1.0), re(0.5)];
        let direct = densekit::vec_dot(&x, &g.matrix().matmul(&ComplexMatrix::column(&x)).col_vec(0)).re.sqrt();
        assert!((g.vec_norm(&x) - direct).abs() < 1e-14);
        // operator norm from the generalized eigenproblem Z^H G Z x = mu G x
        let z = ComplexMatrix::from_rows(&[vec![re(1.0), C64::new(0.0, 2.0)], vec![re(-0.5), re(0.3)]]).unwrap();
        let zgz = z.adjoint().matmul(g.matrix()).matmul(&z);
        let mu = densekit::eig_generalized(&zgz, g.matrix(), false).unwrap().values;
        let want = mu.iter().map(|m| m.norm()).fold(0.0, f64::max).sqrt();
        assert!((g.op_norm(&z) - want).abs() < 1e-12 * want);
    }

    #[test]
    fn nearest_frame_of_contained_subspace_is_itself() {
        let s = e(3, 0);
        let t = e(3, 1).hcat(&e(3, 0));
        let f = nearest_frame(&s, &t).unwrap();
        assert!((&f - &s).norm_fro() < 1e-14);
    }
}
