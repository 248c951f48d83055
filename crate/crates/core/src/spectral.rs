//! Resolvent norms, circular contours and Riesz–Dunford spectral projectors.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::densekit::{self, eigenvalues, rank_with_tol, sigma_min, singular_values, ComplexMatrix, DenseError, C64, RANK_RTOL};
use crate::subspaces::{orthonormalize, Gram, Subspace, SubspaceError};

/// Default number of trapezoidal nodes on a contour.
pub const DEFAULT_NODES: usize = 32;
/// Upper limit for adaptive node doubling.
pub const MAX_NODES: usize = 1024;
/// Convergence target between successive node doublings.
pub const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error("invalid contour: {0}")]
    InvalidContour(String),
    #[error("point {z} lies on the spectrum (sigma_min {sigma_min:e})")]
    SpectralHit { z: C64, sigma_min: f64 },
    #[error("eigenvalue {lambda} lies on the contour")]
    EigenvalueOnContour { lambda: C64 },
    #[error("contour quadrature did not settle: increment {increment:e} at {nodes} nodes")]
    NotConverged { nodes: usize, increment: f64 },
    #[error("operator is not idempotent (defect {defect:e})")]
    NotIdempotent { defect: f64 },
    #[error("rank of the projector is ambiguous")]
    AmbiguousRank,
}

pub type SpectralResult<T> = Result<T, SpectralError>;

/// Positively oriented circle with `nodes` trapezoidal quadrature points.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Contour {
    pub center: C64,
    pub radius: f64,
    pub nodes: usize,
}

impl Contour {
    pub fn new(center: C64, radius: f64, nodes: usize) -> SpectralResult<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(SpectralError::InvalidContour(format!("radius {radius}")));
        }
        if !center.re.is_finite() || !center.im.is_finite() {
            return Err(SpectralError::InvalidContour("non-finite center".into()));
        }
        if nodes < 8 {
            return Err(SpectralError::InvalidContour(format!("{nodes} nodes, need at least 8")));
        }
        Ok(Self { center, radius, nodes })
    }

    pub fn with_nodes(&self, nodes: usize) -> Self {
        Self { nodes, ..*self }
    }

    pub fn node(&self, j: usize, q: usize) -> C64 {
        self.center + self.radius * C64::from_polar(1.0, 2.0 * PI * j as f64 / q as f64)
    }

    pub fn points(&self) -> Vec<C64> {
        (0..self.nodes).map(|j| self.node(j, self.nodes)).collect()
    }

    pub fn length(&self) -> f64 {
        2.0 * PI * self.radius
    }

    pub fn encloses(&self, z: C64) -> bool {
        (z - self.center).norm() < self.radius
    }

    /// Distance from `z` to the circle itself.
    pub fn distance(&self, z: C64) -> f64 {
        ((z - self.center).norm() - self.radius).abs()
    }
}

/// Circle around the centroid of `cluster`, with radius halfway between the
/// cluster spread and the nearest excluded point. The origin is excluded
/// when `exclude_origin` is set.
pub fn place_contour(cluster: &[C64], others: &[C64], exclude_origin: bool, nodes: usize) -> SpectralResult<Contour> {
    if cluster.is_empty() {
        return Err(SpectralError::InvalidContour("empty cluster".into()));
    }
    let center = cluster.iter().sum::<C64>() / cluster.len() as f64;
    let spread = cluster.iter().map(|z| (z - center).norm()).fold(0.0, f64::max);
    let mut nearest = f64::INFINITY;
    for z in others {
        nearest = nearest.min((z - center).norm());
    }
    if exclude_origin {
        nearest = nearest.min(center.norm());
    }
    if !nearest.is_finite() {
        nearest = 2.0 * spread.max(center.norm()).max(1.0);
    }
    if nearest <= spread {
        return Err(SpectralError::InvalidContour("cluster is not isolated".into()));
    }
    Contour::new(center, 0.5 * (spread + nearest), nodes)
}

fn weighted(l: &ComplexMatrix, gram: &Gram) -> ComplexMatrix {
    if gram.is_identity() {
        return l.clone();
    }
    let rl = gram.sqrt_apply(l);
    gram.sqrt_inv_apply(&rl.adjoint()).adjoint()
}

fn resolvent_sigma(lw: &ComplexMatrix, z: C64) -> SpectralResult<f64> {
    let shifted = (-lw).shift(z);
    Ok(sigma_min(&shifted)?)
}

/// `||(z - L)^{-1}||_G`.
pub fn resolvent_norm(l: &ComplexMatrix, z: C64, gram: &Gram) -> SpectralResult<f64> {
    if !l.is_square() {
        return Err(DenseError::NotSquare { rows: l.rows(), cols: l.cols() }.into());
    }
    l.check_finite()?;
    let lw = weighted(l, gram);
    let s = resolvent_sigma(&lw, z)?;
    let scale = 1f64.max(z.norm()).max(l.norm_max());
    if s <= 1e-13 * scale {
        return Err(SpectralError::SpectralHit { z, sigma_min: s });
    }
    Ok(1.0 / s)
}

/// `min_j 1/||(z_j - L)^{-1}||_G` over the contour nodes.
pub fn epsilon_on_contour(l: &ComplexMatrix, contour: &Contour, gram: &Gram) -> SpectralResult<f64> {
    l.check_finite()?;
    let lw = weighted(l, gram);
    let sig: Vec<SpectralResult<f64>> = contour.points().par_iter().map(|&z| resolvent_sigma(&lw, z)).collect();
    let mut eps = f64::INFINITY;
    for s in sig {
        eps = eps.min(s?);
    }
    Ok(eps)
}

/// Spectral projector with quadrature bookkeeping.
#[derive(Debug, Clone)]
pub struct SpectralProjector {
    pub matrix: ComplexMatrix,
    /// Nodes used by the returned approximation.
    pub nodes: usize,
    /// Size of the last doubling increment.
    pub increment: f64,
}

fn node_sum(l: &ComplexMatrix, contour: &Contour, q: usize, idx: &[usize]) -> SpectralResult<ComplexMatrix> {
    let n = l.rows();
    let terms: Vec<SpectralResult<ComplexMatrix>> = idx
        .par_iter()
        .map(|&j| {
            let z = contour.node(j, q);
            let inv = densekit::inverse(&(-l).shift(z))?;
            Ok(inv.scale(z - contour.center))
        })
        .collect();
    let mut acc = ComplexMatrix::zeros(n, n);
    for t in terms {
        acc = &acc + &t?;
    }
    Ok(acc)
}

/// Trapezoidal approximation of the Riesz–Dunford integral with exactly
/// `contour.nodes` nodes.
pub fn trapezoid_projector(l: &ComplexMatrix, contour: &Contour) -> SpectralResult<ComplexMatrix> {
    if !l.is_square() {
        return Err(DenseError::NotSquare { rows: l.rows(), cols: l.cols() }.into());
    }
    l.check_finite()?;
    let q = contour.nodes;
    let all: Vec<usize> = (0..q).collect();
    Ok(node_sum(l, contour, q, &all)?.scale_real(1.0 / q as f64))
}

/// Riesz–Dunford projector `(1/2 pi i) \oint (z - L)^{-1} dz` by the
/// trapezoidal rule, doubling the node count until successive values agree.
pub fn dunford_projector(l: &ComplexMatrix, contour: &Contour, gram: &Gram) -> SpectralResult<SpectralProjector> {
    if !l.is_square() {
        return Err(DenseError::NotSquare { rows: l.rows(), cols: l.cols() }.into());
    }
    l.check_finite()?;
    for lambda in eigenvalues(l)? {
        if contour.distance(lambda) <= 1e-10 * contour.radius {
            return Err(SpectralError::EigenvalueOnContour { lambda });
        }
    }
    let mut q = contour.nodes;
    let all: Vec<usize> = (0..q).collect();
    let mut sum = node_sum(l, contour, q, &all)?;
    let mut current = sum.scale_real(1.0 / q as f64);
    let mut increment = f64::INFINITY;
    while 2 * q <= MAX_NODES {
        let odd: Vec<usize> = (0..q).map(|j| 2 * j + 1).collect();
        sum = &sum + &node_sum(l, contour, 2 * q, &odd)?;
        q *= 2;
        let next = sum.scale_real(1.0 / q as f64);
        let diff = &next - &current;
        increment = weighted(&diff, gram).norm_fro();
        current = next;
        if increment <= QUADRATURE_TOL * current.norm_fro().max(1.0) {
            return Ok(SpectralProjector { matrix: current, nodes: q, increment });
        }
    }
    Err(SpectralError::NotConverged { nodes: q, increment })
}

/// G-orthonormal frame for `Ran(E)` of an idempotent `E`.
pub fn invariant_subspace(e: &ComplexMatrix, gram: &Gram) -> SpectralResult<Subspace> {
    if !e.is_square() {
        return Err(DenseError::NotSquare { rows: e.rows(), cols: e.cols() }.into());
    }
    e.check_finite()?;
    let defect = (&e.matmul(e) - e).norm_fro();
    if defect > 1e-9 * e.norm_fro().max(1.0) {
        return Err(SpectralError::NotIdempotent { defect });
    }
    let dec = densekit::svd(e)?;
    let smax = dec.s[0];
    // nonzero singular values of an idempotent are >= 1
    let tol = (RANK_RTOL * smax * e.rows() as f64).max(1e-6 * smax.max(1.0));
    let (rank, ambiguous) = rank_with_tol(&dec.s, tol);
    if ambiguous {
        return Err(SpectralError::AmbiguousRank);
    }
    if rank == 0 {
        return Ok(Subspace::empty(e.rows(), gram));
    }
    Ok(orthonormalize(&dec.u.col_range(0, rank), gram)?)
}

/// Smallest singular value of `z - L` in the Euclidean norm; handy for
/// pseudospectral sweeps.
pub fn smallest_singular_value(l: &ComplexMatrix, z: C64) -> SpectralResult<f64> {
    let s = singular_values(&(-l).shift(z))?;
    Ok(*s.last().unwrap_or(&0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn re(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn resolvent_of_nilpotent() {
        let l = ComplexMatrix::from_real_rows(&[vec![0.0, 100.0], vec![0.0, 0.0]]).unwrap();
        let g = Gram::identity(2, "E");
        let r = resolvent_norm(&l, re(1.0), &g).unwrap();
        // oracle: explicit inverse [[1, 100], [0, 1]]
        let inv = ComplexMatrix::from_real_rows(&[vec![1.0, 100.0], vec![0.0, 1.0]]).unwrap();
        assert!((r - inv.norm2()).abs() < 1e-10 * r);
        assert!(r > 100.0 && r < 100.02);
    }

    #[test]
    fn resolvent_at_eigenvalue_is_a_hit() {
        let l = ComplexMatrix::diag(&[re(1.0), re(2.0)]);
        let g = Gram::identity(2, "E");
        assert!(matches!(resolvent_norm(&l, re(2.0), &g), Err(SpectralError::SpectralHit { .. })));
    }

    #[test]
    fn dunford_of_diagonal() {
        let l = ComplexMatrix::diag(&[re(1.0), re(5.0)]);
        let g = Gram::identity(2, "E");
        let c = Contour::new(re(1.0), 1.0, DEFAULT_NODES).unwrap();
        let e = dunford_projector(&l, &c, &g).unwrap();
        let want = ComplexMatrix::diag(&[re(1.0), re(0.0)]);
        assert!((&e.matrix - &want).norm_fro() < 1e-10);
    }

    #[test]
    fn eigenvalue_on_contour_is_rejected() {
        let l = ComplexMatrix::diag(&[re(1.0), re(2.0)]);
        let g = Gram::identity(2, "E");
        let c = Contour::new(re(1.0), 1.0, DEFAULT_NODES).unwrap();
        assert!(matches!(dunford_projector(&l, &c, &g), Err(SpectralError::EigenvalueOnContour { .. })));
    }

    #[test]
    fn contour_enclosing_nothing_gives_empty_subspace() {
        let l = ComplexMatrix::diag(&[re(1.0), re(2.0)]);
        let g = Gram::identity(2, "E");
        let c = Contour::new(re(10.0), 1.0, DEFAULT_NODES).unwrap();
        let e = dunford_projector(&l, &c, &g).unwrap();
        assert!(e.matrix.norm_fro() < 1e-12);
        assert_eq!(invariant_subspace(&e.matrix, &g).unwrap().dim(), 0);
    }

    #[test]
    fn placement_excludes_origin() {
        let c = place_contour(&[re(2.0)], &[re(10.0)], true, 32).unwrap();
        assert!((c.radius - 1.0).abs() < 1e-15);
        let c = place_contour(&[re(2.0)], &[re(3.0)], false, 32).unwrap();
        assert!((c.radius - 0.5).abs() < 1e-15);
    }
}
