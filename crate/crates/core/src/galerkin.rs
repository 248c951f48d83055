//! Petrov–Galerkin pencils on a reference operator, the projectors `Q_h` and
//! `P_h`, and the diagnostic functionals built from them.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::densekit::{self, eig_dense, eig_generalized, svd, ComplexMatrix, DenseError, EigenDecomposition, C64};
use crate::spectral::{dunford_projector, invariant_subspace, place_contour, Contour, SpectralError, DEFAULT_NODES};
use crate::subspaces::{containment_gap, orthonormalize, Gram, Subspace, SubspaceError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GalerkinError {
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("inner products inconsistent: {0}")]
    BadGram(String),
    #[error("{which} frame is rank deficient (sigma ratio {ratio:e})")]
    RankDeficient { which: &'static str, ratio: f64 },
    #[error("inf-sup failure: {0} is singular")]
    InfSup(&'static str),
    #[error("pencil residual {0:e} too large")]
    Residual(f64),
    #[error("target subspace is not invariant (residual {0:e})")]
    NotInvariant(f64),
    #[error("target subspace is contained in the trial space")]
    ExactCapture,
    #[error("found {found} discrete eigenvalues inside the contour, expected {expected}")]
    ClusterMismatch { found: usize, expected: usize },
    #[error("contour does not isolate the target: {0}")]
    NotIsolated(String),
}

pub type GalerkinResult<T> = Result<T, GalerkinError>;

/// Reference operator with its two inner products.
#[derive(Debug)]
pub struct ReferenceProblem {
    pub a_ref: ComplexMatrix,
    pub gram_h: Gram,
    pub gram_v: Gram,
    /// Diagonal of the self-adjoint part in reference coordinates, when known.
    pub a0_diag: Option<Vec<f64>>,
    inverse: OnceLock<Result<ComplexMatrix, DenseError>>,
}

impl ReferenceProblem {
    pub fn new(a_ref: ComplexMatrix, gram_h: Gram, gram_v: Gram, a0_diag: Option<Vec<f64>>) -> GalerkinResult<Self> {
        if !a_ref.is_square() {
            return Err(DenseError::NotSquare { rows: a_ref.rows(), cols: a_ref.cols() }.into());
        }
        a_ref.check_finite()?;
        let n = a_ref.rows();
        if gram_h.dim() != n || gram_v.dim() != n {
            return Err(GalerkinError::Shape(format!(
                "operator has dimension {n}, inner products {} and {}",
                gram_h.dim(),
                gram_v.dim()
            )));
        }
        if let Some(d) = &a0_diag {
            if d.len() != n || d.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(GalerkinError::BadGram("self-adjoint part must have positive entries".into()));
            }
            let expect = gram_h.matrix().scale_rows(d);
            let defect = (&expect - gram_v.matrix()).norm_max();
            if defect > 1e-12 * gram_v.matrix().norm_max() {
                return Err(GalerkinError::BadGram(format!("V inner product differs from A0-weighted H by {defect:e}")));
            }
        }
        Ok(Self { a_ref, gram_h, gram_v, a0_diag, inverse: OnceLock::new() })
    }

    pub fn dim(&self) -> usize {
        self.a_ref.rows()
    }

    /// `T = A_ref^{-1}`, computed once.
    pub fn inverse(&self) -> GalerkinResult<&ComplexMatrix> {
        self.inverse
            .get_or_init(|| densekit::inverse(&self.a_ref))
            .as_ref()
            .map_err(|e| e.clone().into())
    }

    /// `||A_ref||` as a map from the V-norm to its dual, i.e. the bound of
    /// the form `a(u, v) = <v, A u>_H` in V-normalized coordinates.
    pub fn form_bound(&self) -> f64 {
        let rv = self.gram_v.sqrt_inv_apply(&ComplexMatrix::identity(self.dim()));
        let ga = self.gram_h.apply(&self.a_ref);
        rv.adjoint().matmul(&ga).matmul(&rv).norm2()
    }
}

/// Pencil `(A_h, B_h)` for trial frame `phi` and test frame `psi`.
#[derive(Debug, Clone)]
pub struct GalerkinSetup {
    pub reference: Arc<ReferenceProblem>,
    pub phi: ComplexMatrix,
    pub psi: ComplexMatrix,
    pub a_h: ComplexMatrix,
    pub b_h: ComplexMatrix,
    b_inv: Option<ComplexMatrix>,
    a_inv: Option<ComplexMatrix>,
    /// `Psi^H G_H`.
    psi_g: ComplexMatrix,
}

fn check_rank(m: &ComplexMatrix, gram: &Gram, which: &'static str) -> GalerkinResult<()> {
    if m.cols() == 0 {
        return Ok(());
    }
    let s = densekit::singular_values(&gram.sqrt_apply(m))?;
    let smax = s[0];
    let smin = *s.last().unwrap();
    if m.cols() > m.rows() || smax == 0.0 || smin <= 1e-12 * smax {
        return Err(GalerkinError::RankDeficient { which, ratio: if smax > 0.0 { smin / smax } else { 0.0 } });
    }
    Ok(())
}

fn try_inverse(m: &ComplexMatrix) -> Option<ComplexMatrix> {
    if m.rows() == 0 {
        return Some(m.clone());
    }
    densekit::inverse(m).ok()
}

pub fn assemble(reference: &Arc<ReferenceProblem>, phi: &ComplexMatrix, psi: &ComplexMatrix) -> GalerkinResult<GalerkinSetup> {
    let n = reference.dim();
    if phi.rows() != n || psi.rows() != n {
        return Err(GalerkinError::Shape(format!("frames must have {n} rows")));
    }
    if phi.cols() != psi.cols() {
        return Err(GalerkinError::Shape(format!("trial has {} columns, test {}", phi.cols(), psi.cols())));
    }
    phi.check_finite()?;
    psi.check_finite()?;
    check_rank(phi, &reference.gram_h, "trial")?;
    check_rank(psi, &reference.gram_h, "test")?;
    let psi_g = reference.gram_h.apply(psi).adjoint();
    let a_h = psi_g.matmul(&reference.a_ref.matmul(phi));
    let b_h = psi_g.matmul(phi);
    Ok(GalerkinSetup {
        reference: reference.clone(),
        phi: phi.clone(),
        psi: psi.clone(),
        b_inv: try_inverse(&b_h),
        a_inv: try_inverse(&a_h),
        a_h,
        b_h,
        psi_g,
    })
}

/// Discrete eigenpairs: `values[i]` with coordinates `coords[:, i]` and
/// ambient vectors `vectors[:, i] = Phi coords[:, i]`.
#[derive(Debug, Clone)]
pub struct DiscreteEigen {
    pub values: Vec<C64>,
    pub coords: ComplexMatrix,
    pub vectors: ComplexMatrix,
}

impl GalerkinSetup {
    pub fn dim(&self) -> usize {
        self.phi.cols()
    }

    pub fn ambient(&self) -> usize {
        self.phi.rows()
    }

    fn b_inv(&self) -> GalerkinResult<&ComplexMatrix> {
        self.b_inv.as_ref().ok_or(GalerkinError::InfSup("test-trial mass matrix"))
    }

    fn a_inv(&self) -> GalerkinResult<&ComplexMatrix> {
        self.a_inv.as_ref().ok_or(GalerkinError::InfSup("discrete stiffness matrix"))
    }

    /// `K = B_h^{-1} A_h`, the discrete operator in trial coordinates.
    pub fn discrete_operator(&self) -> GalerkinResult<ComplexMatrix> {
        Ok(self.b_inv()?.matmul(&self.a_h))
    }

    /// Coordinates of `Q_h X`: `B_h^{-1} Psi^H G_H X`.
    pub fn q_coords(&self, x: &ComplexMatrix) -> GalerkinResult<ComplexMatrix> {
        Ok(self.b_inv()?.matmul(&self.psi_g.matmul(x)))
    }

    /// Coordinates of `P_h X`: `A_h^{-1} Psi^H G_H A_ref X`.
    pub fn p_coords(&self, x: &ComplexMatrix) -> GalerkinResult<ComplexMatrix> {
        Ok(self.a_inv()?.matmul(&self.psi_g.matmul(&self.reference.a_ref.matmul(x))))
    }

    pub fn apply_qh(&self, x: &ComplexMatrix) -> GalerkinResult<ComplexMatrix> {
        Ok(self.phi.matmul(&self.q_coords(x)?))
    }

    pub fn apply_ph(&self, x: &ComplexMatrix) -> GalerkinResult<ComplexMatrix> {
        Ok(self.phi.matmul(&self.p_coords(x)?))
    }

    /// True when trial and test frames span the same space.
    pub fn is_orthogonal_galerkin(&self) -> bool {
        let g = &self.reference.gram_h;
        match (orthonormalize(&self.phi, g), orthonormalize(&self.psi, g)) {
            (Ok(a), Ok(b)) => containment_gap(&a, &b, g).map(|x| x < 1e-12).unwrap_or(false),
            _ => false,
        }
    }
}

pub fn solve_pencil(setup: &GalerkinSetup) -> GalerkinResult<DiscreteEigen> {
    if setup.dim() == 0 {
        return Err(GalerkinError::Shape("empty trial space".into()));
    }
    setup.b_inv()?;
    let dec = eig_generalized(&setup.a_h, &setup.b_h, false).map_err(|e| match e {
        DenseError::Singular { .. } => GalerkinError::InfSup("test-trial mass matrix"),
        other => other.into(),
    })?;
    let y = &dec.right;
    let resid = &setup.a_h.matmul(y) - &setup.b_h.matmul(y).scale_cols(&dec.values);
    let scale = setup.a_h.norm2() + dec.values.iter().map(|v| v.norm()).fold(0.0, f64::max) * setup.b_h.norm2();
    let worst = (0..y.cols()).map(|j| densekit::vec_norm(&resid.col_vec(j))).fold(0.0, f64::max);
    if worst > 1e-9 * scale.max(1.0) {
        return Err(GalerkinError::Residual(worst));
    }
    Ok(DiscreteEigen { values: dec.values, vectors: setup.phi.matmul(y), coords: dec.right })
}

/// Eigenpairs of `A_h y = lhat (B_h + tau A_h) y`, which satisfy
/// `1/lhat = 1/lambda_h + tau`.
pub fn shifted_pencil(setup: &GalerkinSetup, tau: C64) -> GalerkinResult<EigenDecomposition> {
    let shifted = &setup.b_h + &setup.a_h.scale(tau);
    eig_generalized(&setup.a_h, &shifted, false).map_err(|e| match e {
        DenseError::Singular { .. } => GalerkinError::InfSup("shifted mass matrix"),
        other => other.into(),
    })
}

/// Two-sided gap between the cluster subspace of the pencil inside `contour`
/// and the one recovered from the shifted pencil with parameter `tau`.
pub fn shift_invariance_gap(setup: &GalerkinSetup, contour: &Contour, tau: C64) -> GalerkinResult<f64> {
    let g = &setup.reference.gram_h;
    let plain = solve_pencil(setup)?;
    let inside: Vec<usize> = (0..plain.values.len()).filter(|&i| contour.encloses(plain.values[i])).collect();
    let shifted = shifted_pencil(setup, tau)?;
    // 1/lhat = 1/lambda + tau
    let back: Vec<C64> = shifted.values.iter().map(|l| l / (C64::new(1.0, 0.0) - tau * l)).collect();
    let inside_s: Vec<usize> = (0..back.len()).filter(|&i| contour.encloses(back[i])).collect();
    if inside.len() != inside_s.len() {
        return Err(GalerkinError::ClusterMismatch { found: inside_s.len(), expected: inside.len() });
    }
    if inside.is_empty() {
        return Ok(0.0);
    }
    let a = orthonormalize(&plain.vectors.select_cols(&inside), g)?;
    let b = orthonormalize(&setup.phi.matmul(&shifted.right.select_cols(&inside_s)), g)?;
    Ok(containment_gap(&a, &b, g)?.max(containment_gap(&b, &a, g)?))
}

/// `(beta(h), beta_ring(h))`: the smallest singular values of the form `a`
/// on V-orthonormal frames and of the H inner product on H-orthonormal frames.
pub fn infsup_constants(setup: &GalerkinSetup) -> GalerkinResult<(f64, f64)> {
    let r = &setup.reference;
    if setup.dim() == 0 {
        return Ok((0.0, 0.0));
    }
    let ph = orthonormalize(&setup.phi, &r.gram_h)?;
    let qh = orthonormalize(&setup.psi, &r.gram_h)?;
    let beta_ring = densekit::sigma_min(&r.gram_h.inner(&qh.frame, &ph.frame))?;
    let pv = orthonormalize(&setup.phi, &r.gram_v)?;
    let qv = orthonormalize(&setup.psi, &r.gram_v)?;
    let beta = densekit::sigma_min(&r.gram_h.inner(&qv.frame, &r.a_ref.matmul(&pv.frame)))?;
    Ok((beta, beta_ring))
}

pub fn build_qh(setup: &GalerkinSetup) -> GalerkinResult<ComplexMatrix> {
    Ok(setup.phi.matmul(&setup.b_inv()?.matmul(&setup.psi_g)))
}

pub fn build_ph(setup: &GalerkinSetup) -> GalerkinResult<ComplexMatrix> {
    Ok(setup.phi.matmul(&setup.a_inv()?.matmul(&setup.psi_g.matmul(&setup.reference.a_ref))))
}

/// Target invariant subspace with the contour isolating its eigenvalues.
#[derive(Debug, Clone)]
pub struct TargetEigenpair {
    pub lambda: C64,
    /// Eigenvalues of the cluster.
    pub cluster: Vec<C64>,
    pub u: Subspace,
    pub ustar: Option<Subspace>,
    pub m: usize,
    pub contour: Contour,
}

impl TargetEigenpair {
    /// Builds a target from explicit right (and optional left) frames after
    /// checking invariance and isolation.
    pub fn new(
        reference: &ReferenceProblem,
        cluster: Vec<C64>,
        right: &ComplexMatrix,
        left: Option<&ComplexMatrix>,
        contour: Contour,
    ) -> GalerkinResult<Self> {
        let g = &reference.gram_h;
        let u = orthonormalize(right, g)?;
        let a = &reference.a_ref;
        let f = &u.frame;
        let rayleigh = g.inner(f, &a.matmul(f));
        let resid = (&a.matmul(f) - &f.matmul(&rayleigh)).norm2();
        if resid > 1e-9 * a.norm2().max(1.0) {
            return Err(GalerkinError::NotInvariant(resid));
        }
        for z in &cluster {
            if !contour.encloses(*z) {
                return Err(GalerkinError::NotIsolated(format!("{z} lies outside the contour")));
            }
        }
        let ustar = left.map(|l| orthonormalize(l, g)).transpose()?;
        let lambda = cluster.iter().sum::<C64>() / cluster.len().max(1) as f64;
        Ok(Self { lambda, m: u.dim(), cluster, u, ustar, contour })
    }

    /// Eigenvector cluster of `A_ref` made of the `m` eigenvalues nearest to
    /// `approx`, with a contour that also excludes the origin.
    /// The contour radius is multiplied by `radius_factor`.
    pub fn from_reference(reference: &ReferenceProblem, approx: C64, m: usize, radius_factor: f64) -> GalerkinResult<Self> {
        let dec = eig_dense(&reference.a_ref, true)?;
        let mut order: Vec<usize> = (0..dec.values.len()).collect();
        order.sort_by(|&i, &j| (dec.values[i] - approx).norm().total_cmp(&(dec.values[j] - approx).norm()));
        if m == 0 || m > order.len() {
            return Err(GalerkinError::Shape(format!("cluster size {m} out of range")));
        }
        let (inside, outside) = order.split_at(m);
        let cluster: Vec<C64> = inside.iter().map(|&i| dec.values[i]).collect();
        let others: Vec<C64> = outside.iter().map(|&i| dec.values[i]).collect();
        if !(radius_factor > 0.0) {
            return Err(GalerkinError::NotIsolated(format!("radius factor {radius_factor}")));
        }
        let placed = place_contour(&cluster, &others, true, DEFAULT_NODES)?;
        let contour = Contour::new(placed.center, placed.radius * radius_factor, placed.nodes)?;
        if contour.encloses(C64::new(0.0, 0.0)) {
            return Err(GalerkinError::NotIsolated("origin lies inside the contour".into()));
        }
        for z in &others {
            if contour.encloses(*z) {
                return Err(GalerkinError::NotIsolated(format!("{z} lies inside the contour")));
            }
        }
        let right = dec.right.select_cols(inside);
        let left = dec.left.as_ref().map(|l| l.select_cols(inside));
        Self::new(reference, cluster, &right, left.as_ref(), contour)
    }
}

/// Largest generalized singular value `max_c |R num c| / |R den c|`, with
/// null directions of the denominator deflated.
pub fn generalized_ratio(num: &ComplexMatrix, den: &ComplexMatrix, gram: &Gram) -> GalerkinResult<f64> {
    let y = gram.sqrt_apply(den);
    let dec = svd(&y)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    if smax <= 1e-13 {
        return Err(GalerkinError::ExactCapture);
    }
    let keep: Vec<usize> = (0..dec.s.len()).filter(|&i| dec.s[i] * dec.s[i] > 1e-12 * smax * smax).collect();
    let inv: Vec<C64> = keep.iter().map(|&i| C64::new(1.0 / dec.s[i], 0.0)).collect();
    let w = dec.v.select_cols(&keep).scale_cols(&inv);
    Ok(gram.frame_norm(&num.matmul(&w)))
}

/// `(eps_H, eps_ring_H, eps_V)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Functionals {
    pub eps_h: f64,
    pub eps_ring_h: f64,
    pub eps_v: f64,
}

pub fn superconvergence_functionals(setup: &GalerkinSetup, target: &TargetEigenpair) -> GalerkinResult<Functionals> {
    let r = &setup.reference;
    let u = &target.u.frame;
    let a = &r.a_ref;
    let s1h = orthonormalize(&setup.phi, &r.gram_h)?;
    let den_h = residual(u, &s1h, &r.gram_h);
    let qu = setup.apply_qh(u)?;
    let num_h = setup.apply_qh(&a.matmul(&(u - &qu)))?;
    let eps_h = generalized_ratio(&num_h, &den_h, &r.gram_h)?;
    let pu = setup.apply_ph(u)?;
    let eps_ring_h = generalized_ratio(&(&pu - &qu), &den_h, &r.gram_h)?;
    let t = r.inverse()?;
    let s1v = orthonormalize(&setup.phi, &r.gram_v)?;
    let den_v = residual(u, &s1v, &r.gram_v);
    let num_v = setup.apply_ph(&t.matmul(&(u - &pu)))?;
    let eps_v = generalized_ratio(&num_v, &den_v, &r.gram_v)?;
    Ok(Functionals { eps_h, eps_ring_h, eps_v })
}

fn residual(u: &ComplexMatrix, s: &Subspace, gram: &Gram) -> ComplexMatrix {
    u - &s.frame.matmul(&gram.inner(&s.frame, u))
}

/// Diagnostics of one Galerkin study instance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StudyRecord {
    pub h: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub beta: f64,
    pub beta_ring: f64,
    pub gap_us: f64,
    pub gap_uuh: f64,
    pub proj_defect: f64,
    pub eps_h: f64,
    pub eps_ring_h: f64,
    pub eps_v: f64,
    pub eig_err: f64,
    pub gap_us_v: f64,
    pub gap_uuh_v: f64,
    pub proj_defect_v: f64,
    /// `||Q_h A (I - Q_h) u||_H` over unit `u` in the target.
    pub middle_h: f64,
    /// `||P_h T (I - P_h) u||_V` over unit `u` in the target.
    pub middle_v: f64,
    /// `||Q_h A (I - Q_h)||_H`, equal to `||(I - Q_h^*) A^* Q_h^*||_H`.
    pub adjoint_gap_proxy: f64,
    pub lambda_h: Vec<C64>,
    pub nodes: usize,
    pub flags: Vec<String>,
}

impl StudyRecord {
    pub fn flags_joined(&self) -> String {
        self.flags.join("|")
    }
}

/// `||L X||_2` for a tall `L`, through a thin QR of `L`.
fn lowrank_norm(left: &ComplexMatrix, right: &ComplexMatrix) -> f64 {
    if left.cols() == 0 {
        return 0.0;
    }
    let qr = left.mat().qr();
    let tri = ComplexMatrix::from_mat(qr.thin_R().to_owned());
    tri.matmul(right).norm2()
}

/// `||Q_h A (I - Q_h)||_H` without forming ambient matrices beyond `n x N`.
pub fn qaiq_norm(setup: &GalerkinSetup) -> GalerkinResult<f64> {
    let r = &setup.reference;
    let g = &r.gram_h;
    let b_inv = setup.b_inv()?;
    // Q A (I - Q) = Phi B^{-1} X,  X = Psi^H G A - A_h B^{-1} Psi^H G
    let x = &setup.psi_g.matmul(&r.a_ref) - &setup.a_h.matmul(&b_inv.matmul(&setup.psi_g));
    let left = g.sqrt_apply(&setup.phi.matmul(b_inv));
    let xr = x.matmul(&g.sqrt_inv_apply(&ComplexMatrix::identity(setup.ambient())));
    Ok(lowrank_norm(&left, &xr))
}

/// `||P_h||_V` through the rank-`N` factorization of `P_h`.
pub fn ph_norm_v(setup: &GalerkinSetup) -> GalerkinResult<f64> {
    let r = &setup.reference;
    let gv = &r.gram_v;
    let left = gv.sqrt_apply(&setup.phi.matmul(setup.a_inv()?));
    let x = setup.psi_g.matmul(&r.a_ref).matmul(&gv.sqrt_inv_apply(&ComplexMatrix::identity(setup.ambient())));
    Ok(lowrank_norm(&left, &x))
}

/// Full diagnostic record for one trial/test pair.
pub fn cluster_and_diagnose(setup: &GalerkinSetup, target: &TargetEigenpair, h: f64) -> GalerkinResult<StudyRecord> {
    let r = &setup.reference;
    let gh = &r.gram_h;
    let gv = &r.gram_v;
    let pencil = solve_pencil(setup)?;
    let inside: Vec<usize> = (0..pencil.values.len()).filter(|&i| target.contour.encloses(pencil.values[i])).collect();
    if inside.len() != target.m {
        return Err(GalerkinError::ClusterMismatch { found: inside.len(), expected: target.m });
    }
    let lambda_h: Vec<C64> = inside.iter().map(|&i| pencil.values[i]).collect();
    let eig_err = lambda_h.iter().map(|l| (l - target.lambda).norm()).fold(0.0, f64::max);

    let k = setup.discrete_operator()?;
    let nid = Gram::identity(setup.dim(), "coords");
    let ek = dunford_projector(&k, &target.contour, &nid)?;
    let ek_minus_i = &ek.matrix - &ComplexMatrix::identity(setup.dim());
    let range = invariant_subspace(&ek.matrix, &nid)?;
    let uh_raw = setup.phi.matmul(&range.frame);

    let u = &target.u.frame;
    let s1h = orthonormalize(&setup.phi, gh)?;
    let uh = orthonormalize(&uh_raw, gh)?;
    let gap_us = containment_gap(&target.u, &s1h, gh)?;
    let gap_uuh = containment_gap(&target.u, &uh, gh)?;
    let q_coords = setup.q_coords(u)?;
    let proj_defect = gh.frame_norm(&setup.phi.matmul(&ek_minus_i.matmul(&q_coords)));

    let uv = orthonormalize(u, gv)?;
    let s1v = orthonormalize(&setup.phi, gv)?;
    let uhv = orthonormalize(&uh_raw, gv)?;
    let gap_us_v = containment_gap(&uv, &s1v, gv)?;
    let gap_uuh_v = containment_gap(&uv, &uhv, gv)?;
    let p_coords = setup.p_coords(&uv.frame)?;
    let proj_defect_v = gv.frame_norm(&setup.phi.matmul(&ek_minus_i.matmul(&p_coords)));

    let mut flags = Vec::new();
    let (eps, eps_flag) = match superconvergence_functionals(setup, target) {
        Ok(f) => (f, None),
        Err(GalerkinError::ExactCapture) => (Functionals { eps_h: 0.0, eps_ring_h: 0.0, eps_v: 0.0 }, Some("exact_capture")),
        Err(e) => return Err(e),
    };
    if let Some(f) = eps_flag {
        flags.push(f.to_string());
    }
    let (beta, beta_ring) = infsup_constants(setup)?;

    let qu = setup.apply_qh(u)?;
    let middle_h = gh.frame_norm(&setup.apply_qh(&r.a_ref.matmul(&(u - &qu)))?);
    let pu = setup.apply_ph(&uv.frame)?;
    let middle_v = gv.frame_norm(&setup.apply_ph(&r.inverse()?.matmul(&(&uv.frame - &pu)))?);
    let adjoint_gap_proxy = qaiq_norm(setup)?;

    if setup.is_orthogonal_galerkin() && gap_us > gap_uuh + 1e-12 {
        flags.push("sandwich_violation".to_string());
    }
    if target.m > 1 {
        flags.push("cluster".to_string());
    }
    Ok(StudyRecord {
        h,
        n: setup.dim(),
        beta,
        beta_ring,
        gap_us,
        gap_uuh,
        proj_defect,
        eps_h: eps.eps_h,
        eps_ring_h: eps.eps_ring_h,
        eps_v: eps.eps_v,
        eig_err,
        gap_us_v,
        gap_uuh_v,
        proj_defect_v,
        middle_h,
        middle_v,
        adjoint_gap_proxy,
        lambda_h,
        nodes: ek.nodes,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelproblem::{complex_gaussian, nonnormal_testbed};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn diag_reference(d: &[f64]) -> Arc<ReferenceProblem> {
        let n = d.len();
        Arc::new(
            ReferenceProblem::new(ComplexMatrix::diag_real(d), Gram::identity(n, "H"), Gram::identity(n, "V"), None)
                .unwrap(),
        )
    }

    fn coordinate(n: usize, k: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, k, |i, j| c(if i == j { 1.0 } else { 0.0 }))
    }

    #[test]
    fn coordinate_pencil_is_leading_block() {
        let r = diag_reference(&[1.0, 2.0, 3.0, 4.0]);
        let phi = coordinate(4, 2);
        let s = assemble(&r, &phi, &phi).unwrap();
        assert_eq!(s.a_h, ComplexMatrix::diag_real(&[1.0, 2.0]));
        let mut vals: Vec<f64> = solve_pencil(&s).unwrap().values.iter().map(|z| z.re).collect();
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 2.0).abs() < 1e-12);
        let q = build_qh(&s).unwrap();
        assert!((&q - &ComplexMatrix::diag_real(&[1.0, 1.0, 0.0, 0.0])).norm_max() < 1e-14);
        let (beta, beta_ring) = infsup_constants(&s).unwrap();
        assert!((beta_ring - 1.0).abs() < 1e-12);
        assert!((beta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_test_space_fails_infsup() {
        let r = diag_reference(&[1.0, 2.0, 3.0, 4.0]);
        let phi = coordinate(4, 1);
        let psi = ComplexMatrix::from_fn(4, 1, |i, _| c(if i == 1 { 1.0 } else { 0.0 }));
        let s = assemble(&r, &phi, &psi).unwrap();
        assert_eq!(infsup_constants(&s).unwrap().1, 0.0);
        assert!(matches!(solve_pencil(&s), Err(GalerkinError::InfSup(_))));
    }

    #[test]
    fn scalar_shift() {
        let r = diag_reference(&[2.0]);
        let s = assemble(&r, &coordinate(1, 1), &coordinate(1, 1)).unwrap();
        let d = shifted_pencil(&s, c(1.0)).unwrap();
        assert!((d.values[0] - c(2.0 / 3.0)).norm() < 1e-14);
    }

    #[test]
    fn projectors_are_idempotent_with_galerkin_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spectrum: Vec<C64> = (1..=12).map(|k| C64::new(k as f64, 0.3 * k as f64)).collect();
        let tb = nonnormal_testbed(&spectrum, 1.0, &mut rng).unwrap();
        let phi = complex_gaussian(12, 5, &mut rng);
        let psi = complex_gaussian(12, 5, &mut rng);
        let s = assemble(&tb.reference, &phi, &psi).unwrap();
        let q = build_qh(&s).unwrap();
        let p = build_ph(&s).unwrap();
        assert!((&q.matmul(&q) - &q).norm2() < 1e-10);
        assert!((&p.matmul(&p) - &p).norm2() < 1e-10);
        let a = &tb.reference.a_ref;
        let id = ComplexMatrix::identity(12);
        assert!(psi.adjoint_mul(&a.matmul(&(&id - &p))).norm2() < 1e-10 * a.norm2());
        assert!(psi.adjoint_mul(&(&id - &q)).norm2() < 1e-10);
        assert!((&q.matmul(&phi) - &phi).norm2() < 1e-10);
        assert!((&p.matmul(&phi) - &phi).norm2() < 1e-10);
    }

    #[test]
    fn exact_capture_is_reported() {
        let r = diag_reference(&[1.0, 2.0, 3.0, 4.0]);
        let phi = coordinate(4, 2);
        let s = assemble(&r, &phi, &phi).unwrap();
        let target = TargetEigenpair::from_reference(&r, c(1.0), 1, 1.0).unwrap();
        assert!(matches!(superconvergence_functionals(&s, &target), Err(GalerkinError::ExactCapture)));
        let rec = cluster_and_diagnose(&s, &target, 0.5).unwrap();
        assert!(rec.proj_defect < 1e-14 && rec.gap_uuh < 1e-14 && rec.eig_err < 1e-14);
        assert!(rec.flags.contains(&"exact_capture".to_string()));
    }

    #[test]
    fn qaiq_norm_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spectrum: Vec<C64> = (1..=10).map(|k| c(k as f64)).collect();
        let tb = nonnormal_testbed(&spectrum, 0.5, &mut rng).unwrap();
        let phi = complex_gaussian(10, 4, &mut rng);
        let s = assemble(&tb.reference, &phi, &phi).unwrap();
        let q = build_qh(&s).unwrap();
        let id = ComplexMatrix::identity(10);
        let dense = q.matmul(&tb.reference.a_ref).matmul(&(&id - &q)).norm2();
        assert!((qaiq_norm(&s).unwrap() - dense).abs() < 1e-10 * dense);
        let p = build_ph(&s).unwrap();
        let pv = tb.reference.gram_v.op_norm(&p);
        assert!((ph_norm_v(&s).unwrap() - pv).abs() < 1e-10 * pv);
    }
}
