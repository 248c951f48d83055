//! Arnoldi and two-sided Lanczos with per-step projection diagnostics.

use serde::{Deserialize, Serialize};

use crate::densekit::{eig_dense, hermitian_eig, vec_dot, vec_norm, ComplexMatrix, DenseError, C64};
use crate::subspaces::{orthonormalize, residual_norm, Gram, SubspaceError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KrylovError {
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error("start vector is zero")]
    ZeroStart,
    #[error("start vectors are orthogonal")]
    OrthogonalStarts,
    #[error("bad dimensions: {0}")]
    Shape(String),
    #[error("step {requested} unavailable, run has {available} steps")]
    StepUnavailable { requested: usize, available: usize },
    #[error("target is not an eigenpair (residual {0:e})")]
    NotEigenpair(f64),
}

pub type KrylovResult<T> = Result<T, KrylovError>;

/// Relative size of a next residual below which the Krylov space is invariant.
pub const HAPPY_TOL: f64 = 1e-13;
/// Relative size of `|s^H r|` that counts as a serious breakdown.
pub const BREAKDOWN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Arnoldi,
    Bilanczos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BreakdownKind {
    /// The Krylov space became invariant.
    Happy,
    /// `w^H v` vanished with nonzero residuals.
    Serious,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    /// Index of the basis vector that could not be formed.
    pub step: usize,
    pub kind: BreakdownKind,
}

/// State of a Krylov recurrence after `len()` steps.
#[derive(Debug, Clone)]
pub struct KrylovRun {
    pub method: Method,
    pub a: ComplexMatrix,
    /// Right basis vectors, including the next one when available.
    pub v: Vec<Vec<C64>>,
    /// Left basis vectors (two-sided Lanczos only).
    pub w: Vec<Vec<C64>>,
    /// Column `j` holds the recurrence coefficients of step `j`
    /// (Arnoldi: `h[0..=j+1][j]`).
    h: Vec<Vec<C64>>,
    pub alphas: Vec<C64>,
    /// `betas[i]` is the subdiagonal coupling `beta_{i+2}`.
    pub betas: Vec<f64>,
    /// `gammas[i]` is the superdiagonal coupling `gamma_{i+2}`.
    pub gammas: Vec<C64>,
    pub breakdown: Option<Breakdown>,
    pub a_norm: f64,
    steps: usize,
}

fn check_start(a: &ComplexMatrix, v: &[C64]) -> KrylovResult<f64> {
    if !a.is_square() {
        return Err(DenseError::NotSquare { rows: a.rows(), cols: a.cols() }.into());
    }
    if v.len() != a.rows() {
        return Err(KrylovError::Shape(format!("start vector has length {}, matrix order {}", v.len(), a.rows())));
    }
    a.check_finite()?;
    let nv = vec_norm(v);
    if !(nv > 0.0) || !nv.is_finite() {
        return Err(KrylovError::ZeroStart);
    }
    Ok(nv)
}

fn matvec(a: &ComplexMatrix, x: &[C64]) -> Vec<C64> {
    a.matmul(&ComplexMatrix::column(x)).col_vec(0)
}

fn axpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn frame(cols: &[Vec<C64>], n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Arnoldi with modified Gram–Schmidt and one reorthogonalization pass.
pub fn arnoldi(a: &ComplexMatrix, v1: &[C64], l_max: usize) -> KrylovResult<KrylovRun> {
    let nv = check_start(a, v1)?;
    let n = a.rows();
    if l_max == 0 || l_max > n {
        return Err(KrylovError::Shape(format!("step limit {l_max} outside 1..={n}")));
    }
    let a_norm = a.norm2();
    let tol = HAPPY_TOL * a_norm.max(f64::MIN_POSITIVE);
    let mut run = KrylovRun::empty(Method::Arnoldi, a, a_norm);
    run.v.push(v1.iter().map(|z| z / nv).collect());
    for j in 0..l_max {
        let mut r = matvec(a, &run.v[j]);
        let mut col = vec![C64::new(0.0, 0.0); j + 2];
        for _pass in 0..2 {
            for (i, vi) in run.v.iter().enumerate().take(j + 1) {
                let c = vec_dot(vi, &r);
                col[i] += c;
                axpy(&mut r, -c, vi);
            }
        }
        let beta = vec_norm(&r);
        col[j + 1] = C64::new(beta, 0.0);
        run.h.push(col);
        run.alphas.push(run.h[j][j]);
        run.steps = j + 1;
        if beta <= tol {
            run.betas.push(0.0);
            run.gammas.push(C64::new(0.0, 0.0));
            run.breakdown = Some(Breakdown { step: j + 2, kind: BreakdownKind::Happy });
            break;
        }
        run.betas.push(beta);
        run.gammas.push(C64::new(beta, 0.0));
        run.v.push(r.iter().map(|z| z / beta).collect());
    }
    Ok(run)
}

/// Two-sided Lanczos with `w_i^H v_i = 1`, `beta_i = sqrt|w^H v|` real
/// positive and `|gamma_i| = beta_i`, plus full re-biorthogonalization.
pub fn bilanczos(a: &ComplexMatrix, v1: &[C64], w1: &[C64], l_max: usize) -> KrylovResult<KrylovRun> {
    let nv = check_start(a, v1)?;
    check_start(a, w1)?;
    let n = a.rows();
    if l_max == 0 || l_max > n {
        return Err(KrylovError::Shape(format!("step limit {l_max} outside 1..={n}")));
    }
    let v0: Vec<C64> = v1.iter().map(|z| z / nv).collect();
    let s0 = vec_dot(w1, &v0);
    if s0.norm() <= BREAKDOWN_TOL * vec_norm(w1) {
        return Err(KrylovError::OrthogonalStarts);
    }
    let w0: Vec<C64> = w1.iter().map(|z| z / s0.conj()).collect();
    let a_norm = a.norm2();
    let tol = HAPPY_TOL * a_norm.max(f64::MIN_POSITIVE);
    let ah = a.adjoint();
    let mut run = KrylovRun::empty(Method::Bilanczos, a, a_norm);
    run.v.push(v0);
    run.w.push(w0);
    for j in 0..l_max {
        let av = matvec(a, &run.v[j]);
        let alpha = vec_dot(&run.w[j], &av);
        let mut r = av;
        axpy(&mut r, -alpha, &run.v[j]);
        let mut s = matvec(&ah, &run.w[j]);
        axpy(&mut s, -alpha.conj(), &run.w[j]);
        if j > 0 {
            let (beta, gamma) = (run.betas[j - 1], run.gammas[j - 1]);
            let (vp, wp) = (run.v[j - 1].clone(), run.w[j - 1].clone());
            axpy(&mut r, -gamma, &vp);
            axpy(&mut s, -C64::new(beta, 0.0), &wp);
        }
        for _pass in 0..2 {
            for i in 0..=j {
                let cr = vec_dot(&run.w[i], &r);
                let cs = vec_dot(&run.v[i], &s);
                let (vi, wi) = (run.v[i].clone(), run.w[i].clone());
                axpy(&mut r, -cr, &vi);
                axpy(&mut s, -cs, &wi);
            }
        }
        run.alphas.push(alpha);
        run.steps = j + 1;
        let (nr, ns) = (vec_norm(&r), vec_norm(&s));
        if nr <= tol || ns <= tol {
            run.betas.push(0.0);
            run.gammas.push(C64::new(0.0, 0.0));
            run.breakdown = Some(Breakdown { step: j + 2, kind: BreakdownKind::Happy });
            break;
        }
        let omega = vec_dot(&s, &r);
        if omega.norm() <= BREAKDOWN_TOL * nr * ns {
            run.breakdown = Some(Breakdown { step: j + 2, kind: BreakdownKind::Serious });
            break;
        }
        let beta = omega.norm().sqrt();
        let gamma = omega / beta;
        run.betas.push(beta);
        run.gammas.push(gamma);
        run.v.push(r.iter().map(|z| z / beta).collect());
        run.w.push(s.iter().map(|z| z / gamma.conj()).collect());
    }
    Ok(run)
}

impl KrylovRun {
    fn empty(method: Method, a: &ComplexMatrix, a_norm: f64) -> Self {
        Self {
            method,
            a: a.clone(),
            v: Vec::new(),
            w: Vec::new(),
            h: Vec::new(),
            alphas: Vec::new(),
            betas: Vec::new(),
            gammas: Vec::new(),
            breakdown: None,
            a_norm,
            steps: 0,
        }
    }

    /// Number of completed steps.
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    fn check_step(&self, l: usize) -> KrylovResult<()> {
        if l == 0 || l > self.steps {
            return Err(KrylovError::StepUnavailable { requested: l, available: self.steps });
        }
        Ok(())
    }

    /// `V_l`.
    pub fn v_frame(&self, l: usize) -> KrylovResult<ComplexMatrix> {
        self.check_step(l)?;
        Ok(frame(&self.v[..l], self.dim()))
    }

    /// `W_l` (two-sided Lanczos only).
    pub fn w_frame(&self, l: usize) -> KrylovResult<ComplexMatrix> {
        self.check_step(l)?;
        if self.method != Method::Bilanczos {
            return Err(KrylovError::Shape("Arnoldi runs carry no left basis".into()));
        }
        Ok(frame(&self.w[..l], self.dim()))
    }

    /// `H_l` (Arnoldi) or `J_l` (two-sided Lanczos).
    pub fn projected(&self, l: usize) -> KrylovResult<ComplexMatrix> {
        self.check_step(l)?;
        let mut m = ComplexMatrix::zeros(l, l);
        match self.method {
            Method::Arnoldi => {
                for j in 0..l {
                    for i in 0..(j + 2).min(l) {
                        m.set(i, j, self.h[j][i]);
                    }
                }
            }
            Method::Bilanczos => {
                for j in 0..l {
                    m.set(j, j, self.alphas[j]);
                    if j + 1 < l {
                        m.set(j + 1, j, C64::new(self.betas[j], 0.0));
                        m.set(j, j + 1, self.gammas[j]);
                    }
                }
            }
        }
        Ok(m)
    }

    /// `beta_{l+1}`, zero after termination.
    pub fn next_beta(&self, l: usize) -> KrylovResult<f64> {
        self.check_step(l)?;
        Ok(self.betas.get(l - 1).copied().unwrap_or(0.0))
    }

    /// `gamma_{l+1}`, zero after termination.
    pub fn next_gamma(&self, l: usize) -> KrylovResult<C64> {
        self.check_step(l)?;
        Ok(self.gammas.get(l - 1).copied().unwrap_or(C64::new(0.0, 0.0)))
    }

    /// `|beta_2 ... beta_k|` for `k >= 1` (empty product is one).
    pub fn beta_product(&self, k: usize) -> f64 {
        (0..k.saturating_sub(1)).map(|i| self.betas.get(i).copied().unwrap_or(0.0)).product()
    }

    /// Largest recurrence residual relative to `||A||` at step `l`.
    pub fn recurrence_residual(&self, l: usize) -> KrylovResult<f64> {
        let vl = self.v_frame(l)?;
        let m = self.projected(l)?;
        let n = self.dim();
        let beta = self.next_beta(l)?;
        let mut res = &self.a.matmul(&vl) - &vl.matmul(&m);
        if let Some(next) = self.v.get(l) {
            for i in 0..n {
                let z = res.get(i, l - 1) - next[i] * beta;
                res.set(i, l - 1, z);
            }
        }
        let mut worst = res.norm2();
        if self.method == Method::Bilanczos {
            let wl = self.w_frame(l)?;
            let gamma = self.next_gamma(l)?;
            let mut res = &self.a.adjoint().matmul(&wl) - &wl.matmul(&m.adjoint());
            if let Some(next) = self.w.get(l) {
                for i in 0..n {
                    let z = res.get(i, l - 1) - next[i] * gamma.conj();
                    res.set(i, l - 1, z);
                }
            }
            worst = worst.max(res.norm2());
        }
        Ok(worst / self.a_norm.max(f64::MIN_POSITIVE))
    }

    /// `||V_l^H V_l - I||` (Arnoldi) or `||W_l^H V_l - I||` (two-sided).
    pub fn biorthogonality_defect(&self, l: usize) -> KrylovResult<f64> {
        let vl = self.v_frame(l)?;
        let left = match self.method {
            Method::Arnoldi => vl.clone(),
            Method::Bilanczos => self.w_frame(l)?,
        };
        Ok((&left.adjoint_mul(&vl) - &ComplexMatrix::identity(l)).norm2())
    }

    /// `||W||` for the full biorthogonal system; `None` until the run has
    /// produced `n` vectors.
    pub fn w_norm(&self) -> KrylovResult<Option<f64>> {
        let n = self.dim();
        if self.steps < n {
            return Ok(None);
        }
        Ok(Some(match self.method {
            Method::Arnoldi => 1.0,
            Method::Bilanczos => self.w_frame(n)?.norm2(),
        }))
    }

    /// `Q_l X`: orthogonal (Arnoldi) or oblique `V W^H` (two-sided).
    pub fn apply_q(&self, l: usize, x: &ComplexMatrix) -> KrylovResult<ComplexMatrix> {
        let vl = self.v_frame(l)?;
        let left = match self.method {
            Method::Arnoldi => vl.clone(),
            Method::Bilanczos => self.w_frame(l)?,
        };
        Ok(vl.matmul(&left.adjoint_mul(x)))
    }
}

/// Ritz values and unit Ritz vectors of the step-`l` projection.
pub fn ritz_pairs(run: &KrylovRun, l: usize) -> KrylovResult<(Vec<C64>, ComplexMatrix)> {
    let m = run.projected(l)?;
    let dec = eig_dense(&m, false)?;
    let mut y = run.v_frame(l)?.matmul(&dec.right);
    for j in 0..y.cols() {
        let nrm = vec_norm(&y.col_vec(j));
        for i in 0..y.rows() {
            let z = y.get(i, j) / nrm;
            y.set(i, j, z);
        }
    }
    Ok((dec.values, y))
}

/// Tracked simple eigenpair.
#[derive(Debug, Clone)]
pub struct KrylovTarget {
    pub lambda: C64,
    pub u: Vec<C64>,
    pub ustar: Option<Vec<C64>>,
    /// Ritz values farther than this from `lambda` count as unconverged.
    pub radius: f64,
}

impl KrylovTarget {
    pub fn new(a: &ComplexMatrix, lambda: C64, u: &[C64], radius: f64) -> KrylovResult<Self> {
        let nu = vec_norm(u);
        if !(nu > 0.0) {
            return Err(KrylovError::ZeroStart);
        }
        let u: Vec<C64> = u.iter().map(|z| z / nu).collect();
        let mut r = matvec(a, &u);
        axpy(&mut r, -lambda, &u);
        let res = vec_norm(&r);
        if res > 1e-10 * a.norm2().max(1.0) {
            return Err(KrylovError::NotEigenpair(res));
        }
        Ok(Self { lambda, u, ustar: None, radius })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub ell: usize,
    pub ritz: Vec<C64>,
    pub ritz_value: C64,
    pub eig_err: f64,
    /// `||u^(l) - Q_l u||` with the aligned, length-matched Ritz vector.
    pub ritz_defect: f64,
    /// `||u^(l)||`.
    pub ritz_norm: f64,
    /// `||(I - Pi_l) u||`.
    pub gap: f64,
    /// `||Q_l A (I - Q_l) u||` from the matrices.
    pub middle: f64,
    /// Same quantity from the recurrence coefficients.
    pub middle_closed: f64,
    /// `|beta_2 ... beta_l|`.
    pub beta_product: f64,
    /// `|beta_2 ... beta_{l+1}|`.
    pub beta_product_next: f64,
    /// Bound expression `|w_{l+1}^H u| / |beta_2 ... beta_l|` (two-sided) or
    /// `middle / gap` (Arnoldi).
    pub eps_estimate: f64,
    pub converged: bool,
}

fn complement(vl: &ComplexMatrix) -> KrylovResult<ComplexMatrix> {
    let n = vl.rows();
    let q = orthonormalize(vl, &Gram::identity(n, "H"))?.frame;
    let proj = q.matmul(&q.adjoint());
    let (_, vecs) = hermitian_eig(&proj)?;
    Ok(vecs.col_range(0, n - q.cols()))
}

pub fn step_diagnostics(run: &KrylovRun, l: usize, target: &KrylovTarget) -> KrylovResult<StepDiagnostics> {
    let n = run.dim();
    if target.u.len() != n {
        return Err(KrylovError::Shape("target vector length differs from matrix order".into()));
    }
    let (ritz, y) = ritz_pairs(run, l)?;
    let mut best = 0;
    for (i, z) in ritz.iter().enumerate() {
        if (z - target.lambda).norm() < (ritz[best] - target.lambda).norm() {
            best = i;
        }
    }
    let ritz_value = ritz[best];
    let eig_err = (ritz_value - target.lambda).norm();
    let u = ComplexMatrix::column(&target.u);
    let qu = run.apply_q(l, &u)?;
    let qu_vec = qu.col_vec(0);
    let qu_norm = vec_norm(&qu_vec);
    let yv = y.col_vec(best);
    let align = vec_dot(&yv, &qu_vec);
    let phase = if align.norm() > 0.0 { align / align.norm() } else { C64::new(1.0, 0.0) };
    let ul: Vec<C64> = yv.iter().map(|z| z * phase * qu_norm).collect();
    let diff: Vec<C64> = ul.iter().zip(&qu_vec).map(|(a, b)| a - b).collect();
    let ritz_defect = vec_norm(&diff);

    let vl = run.v_frame(l)?;
    let gram = Gram::identity(n, "H");
    let kl = orthonormalize(&vl, &gram)?;
    let gap = residual_norm(&u, &kl, &gram);

    let middle = vec_norm(&run.apply_q(l, &run.a.matmul(&(&u - &qu)))?.col_vec(0));
    let middle_closed = match run.method {
        Method::Bilanczos => match run.w.get(l) {
            Some(wn) => run.next_gamma(l)?.norm() * vec_norm(&run.v[l - 1]) * vec_dot(wn, &target.u).norm(),
            None => 0.0,
        },
        Method::Arnoldi => {
            if l == n {
                0.0
            } else if run.len() == n {
                // coupling block of the full Hessenberg form
                let full = run.projected(n)?;
                let h12 = full.block(0, l, l, n);
                let tail = run.v_frame(n)?.col_range(l, n);
                vec_norm(&h12.matmul(&tail.adjoint_mul(&u)).col_vec(0))
            } else {
                let tail = complement(&vl)?;
                let h12 = vl.adjoint_mul(&run.a.matmul(&tail));
                vec_norm(&h12.matmul(&tail.adjoint_mul(&u)).col_vec(0))
            }
        }
    };
    let beta_product = run.beta_product(l);
    let beta_product_next = run.beta_product(l + 1);
    let eps_estimate = match run.method {
        Method::Bilanczos => {
            let wu = run.w.get(l).map(|w| vec_dot(w, &target.u).norm()).unwrap_or(0.0);
            if beta_product > 0.0 {
                wu / beta_product
            } else {
                f64::INFINITY
            }
        }
        Method::Arnoldi => {
            if gap > 0.0 {
                middle / gap
            } else {
                0.0
            }
        }
    };
    Ok(StepDiagnostics {
        ell: l,
        ritz,
        ritz_value,
        eig_err,
        ritz_defect,
        ritz_norm: vec_norm(&ul),
        gap,
        middle,
        middle_closed,
        beta_product,
        beta_product_next,
        eps_estimate,
        converged: eig_err <= target.radius,
    })
}

/// `(c0, c1)` with `c0 * defect <= middle <= c1 * defect + eig_err * |u^(l)|`
/// over the given rows (rows with zero defect are skipped).
pub fn fit_sandwich(rows: &[StepDiagnostics]) -> Option<(f64, f64)> {
    let mut c0 = f64::INFINITY;
    let mut c1 = 0.0f64;
    let mut used = 0;
    for r in rows {
        if !(r.ritz_defect > 0.0) || !r.converged {
            continue;
        }
        c0 = c0.min(r.middle / r.ritz_defect);
        c1 = c1.max((r.middle - r.eig_err * r.ritz_norm).max(0.0) / r.ritz_defect);
        used += 1;
    }
    (used > 0).then_some((c0, c1))
}

/// Lemma-style gap bound `|beta_2 ... beta_{l+1}| <= ||W|| (1 + sqrt 2) delta`.
pub fn lanczos_gap_holds(d: &StepDiagnostics, w_norm: f64, slack: f64) -> bool {
    d.beta_product_next <= w_norm * (1.0 + std::f64::consts::SQRT_2) * d.gap + slack
}

/// Full-length eigenbasis helper for testbeds: exact eigenvalue nearest `z`
/// and its unit eigenvector.
pub fn nearest_eigenpair(a: &ComplexMatrix, z: C64) -> KrylovResult<(C64, Vec<C64>)> {
    let dec = eig_dense(a, false)?;
    let k = dec.nearest(z);
    Ok((dec.values[k], dec.right.col_vec(k)))
}

/// Dense reference for `||Q_l A (I - Q_l) u||` with `Q_l` built as an
/// explicit `n x n` matrix.
pub fn middle_dense(run: &KrylovRun, l: usize, u: &[C64]) -> KrylovResult<f64> {
    let n = run.dim();
    let q = run.apply_q(l, &ComplexMatrix::identity(n))?;
    let id = ComplexMatrix::identity(n);
    let m = q.matmul(&run.a).matmul(&(&id - &q));
    Ok(vec_norm(&m.matmul(&ComplexMatrix::column(u)).col_vec(0)))
}
