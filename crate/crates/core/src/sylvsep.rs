//! Sylvester equations `L1 S - S L2 = M` and lower bounds for the separation
//! `sep(L1, L2)`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rayon::prelude::*;

use crate::densekit::{self, eigenvalues, expm, hermitian_eig, svd, ComplexMatrix, DenseError, C64};
use crate::spectral::{epsilon_on_contour, Contour, SpectralError, MAX_NODES};
use crate::subspaces::Gram;

/// Largest Kronecker system accepted by the brute-force routines.
pub const MAX_KRON: usize = 10_000;
/// Minimum number of sampled directions for the numerical-range distance.
pub const MIN_DIRECTIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SepError {
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("Kronecker system of size {0} exceeds the limit")]
    TooLarge(usize),
    #[error("spectra are not separated (min distance {0:e})")]
    SpectraOverlap(f64),
    #[error("contour does not separate the spectra: {0}")]
    BadContour(String),
    #[error("numerical ranges are not separated")]
    NumericalRangesOverlap,
    #[error("need at least {MIN_DIRECTIONS} directions, got {0}")]
    TooFewDirections(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contour quadrature did not settle: increment {increment:e} at {nodes} nodes")]
    NotConverged { nodes: usize, increment: f64 },
}

pub type SepResult<T> = Result<T, SepError>;

fn check_pair(l1: &ComplexMatrix, l2: &ComplexMatrix) -> SepResult<()> {
    for l in [l1, l2] {
        if !l.is_square() {
            return Err(DenseError::NotSquare { rows: l.rows(), cols: l.cols() }.into());
        }
        l.check_finite()?;
    }
    if l1.rows() * l2.rows() > MAX_KRON {
        return Err(SepError::TooLarge(l1.rows() * l2.rows()));
    }
    Ok(())
}

/// Matrix of `S -> L1 S - S L2` acting on column-major `vec(S)`:
/// `I (x) L1 - L2^T (x) I`.
pub fn sylvester_operator(l1: &ComplexMatrix, l2: &ComplexMatrix) -> ComplexMatrix {
    let (n1, n2) = (l1.rows(), l2.rows());
    let mut k = ComplexMatrix::zeros(n1 * n2, n1 * n2);
    for j in 0..n2 {
        for i in 0..n1 {
            let row = i + n1 * j;
            for c in 0..n1 {
                let z = k.get(row, c + n1 * j) + l1.get(i, c);
                k.set(row, c + n1 * j, z);
            }
            for l in 0..n2 {
                let z = k.get(row, i + n1 * l) - l2.get(l, j);
                k.set(row, i + n1 * l, z);
            }
        }
    }
    k
}

fn vectorize(m: &ComplexMatrix) -> ComplexMatrix {
    let (r, c) = (m.rows(), m.cols());
    ComplexMatrix::from_fn(r * c, 1, |k, _| m.get(k % r, k / r))
}

fn unvectorize(v: &ComplexMatrix, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |i, j| v.get(i + rows * j, 0))
}

pub fn apply_sylvester(l1: &ComplexMatrix, l2: &ComplexMatrix, s: &ComplexMatrix) -> ComplexMatrix {
    &l1.matmul(s) - &s.matmul(l2)
}

/// Frobenius separation: smallest singular value of the Kronecker operator.
pub fn sep_bruteforce(l1: &ComplexMatrix, l2: &ComplexMatrix) -> SepResult<f64> {
    check_pair(l1, l2)?;
    let k = sylvester_operator(l1, l2);
    if k.rows() == 1 {
        return Ok(k.get(0, 0).norm());
    }
    Ok(densekit::sigma_min(&k)?)
}

/// Sampled estimate of `inf ||L1 S - S L2||_2 / ||S||_2`. Starting from the
/// Frobenius minimizer, alternates a dual step through the inverse map; the
/// smallest observed ratio is an upper estimate of the operator-norm sep.
pub fn sep_operator_sampled(l1: &ComplexMatrix, l2: &ComplexMatrix, iterations: usize) -> SepResult<f64> {
    check_pair(l1, l2)?;
    let (n1, n2) = (l1.rows(), l2.rows());
    let k = sylvester_operator(l1, l2);
    let dec = svd(&k)?;
    let last = dec.v.cols() - 1;
    let mut s = unvectorize(&dec.v.col_range(last, last + 1), n1, n2);
    let ratio = |s: &ComplexMatrix| apply_sylvester(l1, l2, s).norm2() / s.norm2();
    let mut best = ratio(&s);
    let lu = match densekit::Lu::new(&k) {
        Ok(lu) => lu,
        Err(_) => return Ok(0.0),
    };
    for _ in 0..iterations {
        let y = apply_sylvester(l1, l2, &s);
        let d = svd(&y)?;
        let polar = d.u.matmul(&d.v.adjoint());
        s = unvectorize(&lu.solve(&vectorize(&polar))?, n1, n2);
        best = best.min(ratio(&s));
    }
    Ok(best)
}

/// Direct solve of the Kronecker system.
pub fn sylvester_oracle(l1: &ComplexMatrix, l2: &ComplexMatrix, m: &ComplexMatrix) -> SepResult<ComplexMatrix> {
    check_pair(l1, l2)?;
    if m.rows() != l1.rows() || m.cols() != l2.rows() {
        return Err(SepError::Shape(format!("rhs is {}x{}", m.rows(), m.cols())));
    }
    let e1 = eigenvalues(l1)?;
    let e2 = eigenvalues(l2)?;
    let scale = 1f64.max(l1.norm_max()).max(l2.norm_max());
    let mut dmin = f64::INFINITY;
    for a in &e1 {
        for b in &e2 {
            dmin = dmin.min((a - b).norm());
        }
    }
    if dmin <= 1e-8 * scale {
        return Err(SepError::SpectraOverlap(dmin));
    }
    let k = sylvester_operator(l1, l2);
    let x = densekit::solve_linear(&k, &vectorize(m))?;
    Ok(unvectorize(&x, l1.rows(), l2.rows()))
}

fn check_enclosure(l1: &ComplexMatrix, l2: &ComplexMatrix, contour: &Contour) -> SepResult<()> {
    let margin = 1e-10 * contour.radius;
    for z in eigenvalues(l2)? {
        if !contour.encloses(z) || contour.distance(z) <= margin {
            return Err(SepError::BadContour(format!("eigenvalue {z} of L2 is not enclosed")));
        }
    }
    for z in eigenvalues(l1)? {
        if contour.encloses(z) || contour.distance(z) <= margin {
            return Err(SepError::BadContour(format!("eigenvalue {z} of L1 is enclosed")));
        }
    }
    Ok(())
}

/// Solution by contour integration:
/// `S = (1/2 pi i) \oint (L1 - z)^{-1} M (z - L2)^{-1} dz` with the contour
/// around `sigma(L2)` only. Returns the solution and the node count used.
pub fn sylvester_contour(
    l1: &ComplexMatrix,
    l2: &ComplexMatrix,
    m: &ComplexMatrix,
    contour: &Contour,
) -> SepResult<(ComplexMatrix, usize)> {
    check_pair(l1, l2)?;
    if m.rows() != l1.rows() || m.cols() != l2.rows() {
        return Err(SepError::Shape(format!("rhs is {}x{}", m.rows(), m.cols())));
    }
    check_enclosure(l1, l2, contour)?;
    let eval = |q: usize, idx: Vec<usize>| -> SepResult<ComplexMatrix> {
        let terms: Vec<SepResult<ComplexMatrix>> = idx
            .par_iter()
            .map(|&j| {
                let z = contour.node(j, q);
                let left = densekit::solve_linear(&l1.shift(-z), m)?;
                let right_t = densekit::solve_linear(&(-l2).shift(z).transpose(), &left.transpose())?;
                Ok(right_t.transpose().scale(z - contour.center))
            })
            .collect();
        let mut acc = ComplexMatrix::zeros(m.rows(), m.cols());
        for t in terms {
            acc = &acc + &t?;
        }
        Ok(acc)
    };
    let mut q = contour.nodes;
    let mut sum = eval(q, (0..q).collect())?;
    let mut current = sum.scale_real(1.0 / q as f64);
    let mut increment = f64::INFINITY;
    while 2 * q <= MAX_NODES {
        sum = &sum + &eval(2 * q, (0..q).map(|j| 2 * j + 1).collect())?;
        q *= 2;
        let next = sum.scale_real(1.0 / q as f64);
        increment = (&next - &current).norm_fro();
        current = next;
        if increment <= 1e-11 * current.norm_fro() || increment == 0.0 {
            return Ok((current, q));
        }
    }
    Err(SepError::NotConverged { nodes: q, increment })
}

/// Support function of the numerical range: `max Re(e^{-i theta} z)` over
/// `W(L)`, the top eigenvalue of the Hermitian part of `e^{-i theta} L`.
pub fn numerical_range_support(l: &ComplexMatrix, theta: f64) -> SepResult<f64> {
    let rotated = l.scale(C64::from_polar(1.0, -theta));
    let (vals, _) = hermitian_eig(&rotated)?;
    Ok(*vals.last().unwrap())
}

/// Separation of `W(L1)` from `W(L2)` seen along direction `theta`.
fn directional_gap(l1: &ComplexMatrix, l2: &ComplexMatrix, theta: f64) -> SepResult<f64> {
    Ok(-numerical_range_support(l1, theta + PI)? - numerical_range_support(l2, theta)?)
}

/// Distance between numerical ranges estimated from support functions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RangeDistance {
    /// Lower bound for the distance (zero when no separating direction was found).
    pub distance: f64,
    /// Direction pointing from `W(L2)` toward `W(L1)`.
    pub theta: f64,
}

pub fn numrange_distance(l1: &ComplexMatrix, l2: &ComplexMatrix, directions: usize) -> SepResult<RangeDistance> {
    if directions < MIN_DIRECTIONS {
        return Err(SepError::TooFewDirections(directions));
    }
    for l in [l1, l2] {
        if !l.is_square() {
            return Err(DenseError::NotSquare { rows: l.rows(), cols: l.cols() }.into());
        }
    }
    let step = 2.0 * PI / directions as f64;
    let vals: Vec<SepResult<f64>> =
        (0..directions).into_par_iter().map(|j| directional_gap(l1, l2, j as f64 * step)).collect();
    let mut best_theta = 0.0;
    let mut best = f64::NEG_INFINITY;
    for (j, v) in vals.into_iter().enumerate() {
        let v = v?;
        if v > best {
            best = v;
            best_theta = j as f64 * step;
        }
    }
    // golden-section refinement around the best sample; any direction gives
    // a valid lower bound, so refinement can only tighten it
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (best_theta - step, best_theta + step);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = directional_gap(l1, l2, c)?;
    let mut fd = directional_gap(l1, l2, d)?;
    for _ in 0..40 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = directional_gap(l1, l2, c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = directional_gap(l1, l2, d)?;
        }
    }
    for (t, f) in [(c, fc), (d, fd)] {
        if f > best {
            best = f;
            best_theta = t;
        }
    }
    Ok(RangeDistance { distance: best.max(0.0), theta: best_theta.rem_euclid(2.0 * PI) })
}

/// Pseudospectral lower bound `2 pi eps1 eps2 / length(contour)` with
/// `eps_i = min_{z on contour} 1/||(z - L_i)^{-1}||`. The contour must enclose
/// `sigma(L2)` and exclude `sigma(L1)`.
pub fn sep_lower_pseudo(l1: &ComplexMatrix, l2: &ComplexMatrix, contour: &Contour) -> SepResult<(f64, f64, f64)> {
    check_pair(l1, l2)?;
    check_enclosure(l1, l2, contour)?;
    let g1 = Gram::identity(l1.rows(), "E");
    let g2 = Gram::identity(l2.rows(), "E");
    let e1 = epsilon_on_contour(l1, contour, &g1)?;
    let e2 = epsilon_on_contour(l2, contour, &g2)?;
    Ok((2.0 * PI * e1 * e2 / contour.length(), e1, e2))
}

/// Quadrature controls for [`sylvester_semigroup`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemigroupOptions {
    /// Target for the neglected tail `e^{-T Delta} ||M|| / Delta`.
    pub tail: f64,
    /// Minimum number of Gauss–Legendre panels.
    pub panels: usize,
    /// Points per panel.
    pub order: usize,
    /// Explicit truncation time; derived from `tail` when absent.
    pub t_max: Option<f64>,
}

impl Default for SemigroupOptions {
    fn default() -> Self {
        Self { tail: 1e-10, panels: 64, order: 16, t_max: None }
    }
}

#[derive(Debug, Clone)]
pub struct SemigroupSolution {
    pub s: ComplexMatrix,
    pub t_max: f64,
    pub panels: usize,
    pub distance: RangeDistance,
    /// Bound on the truncated tail.
    pub tail_bound: f64,
}

/// Solution through the semigroup integral after rotating and shifting so
/// that `W(L1)` sits in the closed right half-plane and `W(L2)` strictly left
/// of `-Delta`.
pub fn sylvester_semigroup(
    l1: &ComplexMatrix,
    l2: &ComplexMatrix,
    m: &ComplexMatrix,
    opts: &SemigroupOptions,
) -> SepResult<SemigroupSolution> {
    check_pair(l1, l2)?;
    if m.rows() != l1.rows() || m.cols() != l2.rows() {
        return Err(SepError::Shape(format!("rhs is {}x{}", m.rows(), m.cols())));
    }
    let dist = numrange_distance(l1, l2, 256)?;
    if dist.distance <= 0.0 {
        return Err(SepError::NumericalRangesOverlap);
    }
    let delta = dist.distance;
    let rot = C64::from_polar(1.0, -dist.theta);
    let (_, vecs) = hermitian_eig(&l1.scale(rot))?;
    let x = vecs.col_range(0, 1);
    let z1 = x.adjoint_mul(&l1.matmul(&x)).get(0, 0);
    let h1 = l1.shift(-z1).scale(rot);
    let h2 = l2.shift(-z1).scale(rot);

    let m_norm = m.norm2();
    if m_norm == 0.0 {
        return Ok(SemigroupSolution {
            s: ComplexMatrix::zeros(m.rows(), m.cols()),
            t_max: 0.0,
            panels: 0,
            distance: dist,
            tail_bound: 0.0,
        });
    }
    let t_max = opts.t_max.unwrap_or_else(|| ((m_norm / (delta * opts.tail)).ln() / delta).max(0.0));
    let tail_bound = (-t_max * delta).exp() * m_norm / delta;
    let stiff = t_max * (h1.norm2() + h2.norm2()) / 2.0;
    let panels = opts.panels.max(stiff.ceil() as usize).max(1);
    let width = t_max / panels as f64;

    let rule = GaussLegendre::new(NonZeroUsize::new(opts.order.max(1)).unwrap());
    let pairs = rule.as_node_weight_pairs();
    let mut offsets1 = Vec::with_capacity(pairs.len());
    let mut offsets2 = Vec::with_capacity(pairs.len());
    for &(x, _) in pairs {
        let tau = 0.5 * width * (1.0 + x);
        offsets1.push(expm(&h1.scale_real(-tau))?);
        offsets2.push(expm(&h2.scale_real(tau))?);
    }
    let step1 = expm(&h1.scale_real(-width))?;
    let step2 = expm(&h2.scale_real(width))?;
    let mut f1 = ComplexMatrix::identity(l1.rows());
    let mut f2 = ComplexMatrix::identity(l2.rows());
    let mut acc = ComplexMatrix::zeros(m.rows(), m.cols());
    for _ in 0..panels {
        let left = f1.matmul(m);
        for (k, &(_, w)) in pairs.iter().enumerate() {
            let term = offsets1[k].matmul(&left).matmul(&offsets2[k]).matmul(&f2);
            acc = &acc + &term.scale_real(0.5 * width * w);
        }
        f1 = f1.matmul(&step1);
        f2 = f2.matmul(&step2);
    }
    Ok(SemigroupSolution { s: acc.scale(rot), t_max, panels, distance: dist, tail_bound })
}

/// All separation quantities for one pair.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SepReport {
    pub sep_frobenius: f64,
    pub sep_operator_sampled: f64,
    pub bound_pseudo: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub nodes: usize,
    pub bound_numrange: f64,
    pub theta: f64,
}

pub fn sep_report(l1: &ComplexMatrix, l2: &ComplexMatrix, contour: &Contour) -> SepResult<SepReport> {
    let sep_frobenius = sep_bruteforce(l1, l2)?;
    let sep_operator_sampled = sep_operator_sampled(l1, l2, 8)?;
    let (bound_pseudo, eps1, eps2) = sep_lower_pseudo(l1, l2, contour)?;
    let nr = numrange_distance(l1, l2, 256)?;
    Ok(SepReport {
        sep_frobenius,
        sep_operator_sampled,
        bound_pseudo,
        eps1,
        eps2,
        nodes: contour.nodes,
        bound_numrange: nr.distance,
        theta: nr.theta,
    })
}
