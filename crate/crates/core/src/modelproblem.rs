//! Reference problems: a Fourier sine-basis advection–diffusion operator on
//! the unit square and random nonnormal matrices with known eigenpairs.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densekit::{qr_q, ComplexMatrix, C64};
use crate::galerkin::{GalerkinError, ReferenceProblem};
use crate::subspaces::Gram;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("mesh parameter {0} outside (0, 1/2]")]
    BadMeshParameter(f64),
    #[error("reference space too large: {0} modes")]
    TooManyModes(usize),
    #[error("unknown coefficient set '{0}'")]
    UnknownCoefficients(String),
    #[error("advection field does not vanish on the boundary (|b| = {0:e})")]
    BoundaryAdvection(f64),
    #[error("quadrature not converged: entries moved by {0:e} under refinement")]
    Quadrature(f64),
    #[error("spectrum values must be distinct and finite")]
    BadSpectrum,
    #[error(transparent)]
    Galerkin(#[from] GalerkinError),
}

pub type ModelResult<T> = Result<T, ModelError>;

/// Largest reference space accepted by [`assemble_model`].
pub const MAX_REFERENCE_MODES: usize = 2500;
/// Default Gauss–Legendre order per axis; the assembler adds two nodes per
/// resolved sine frequency on top of it.
pub const DEFAULT_QUAD_ORDER: usize = 40;

/// Mode `(k1, k2)` of `phi_k = 2 sin(k1 pi x1) sin(k2 pi x2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SineBasisIndex {
    pub k1: u32,
    pub k2: u32,
}

impl SineBasisIndex {
    pub fn order(&self) -> u32 {
        self.k1 + self.k2
    }

    /// Eigenvalue of the Dirichlet Laplacian: `(k1^2 + k2^2) pi^2`.
    pub fn lambda0(&self) -> f64 {
        ((self.k1 * self.k1 + self.k2 * self.k2) as f64) * PI * PI
    }
}

/// Modes with `|k| h < 1`, sorted by `(|k|, k1)`.
pub fn sine_indices(h: f64) -> ModelResult<Vec<SineBasisIndex>> {
    if !(h > 0.0 && h <= 0.5) {
        return Err(ModelError::BadMeshParameter(h));
    }
    let mut out = Vec::new();
    let mut order = 2u32;
    while (order as f64) * h < 1.0 - 1e-12 {
        for k1 in 1..order {
            out.push(SineBasisIndex { k1, k2: order - k1 });
        }
        order += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    One,
    Sin,
    Cos,
}

/// One-dimensional factor `x^p (1-x)^q trig(freq pi x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    #[serde(default)]
    pub p: u32,
    #[serde(default)]
    pub q: u32,
    #[serde(default = "Factor::default_trig")]
    pub trig: Trig,
    #[serde(default)]
    pub freq: f64,
}

impl Factor {
    fn default_trig() -> Trig {
        Trig::One
    }

    pub const ONE: Factor = Factor { p: 0, q: 0, trig: Trig::One, freq: 0.0 };

    pub fn poly(p: u32, q: u32) -> Self {
        Self { p, q, trig: Trig::One, freq: 0.0 }
    }

    pub fn sin(freq: f64) -> Self {
        Self { p: 0, q: 0, trig: Trig::Sin, freq }
    }

    fn trig_parts(&self, x: f64) -> (f64, f64) {
        let w = self.freq * PI;
        match self.trig {
            Trig::One => (1.0, 0.0),
            Trig::Sin => ((w * x).sin(), w * (w * x).cos()),
            Trig::Cos => ((w * x).cos(), -w * (w * x).sin()),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        x.powi(self.p as i32) * (1.0 - x).powi(self.q as i32) * self.trig_parts(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let (t, dt) = self.trig_parts(x);
        let (p, q) = (self.p as i32, self.q as i32);
        let poly = x.powi(p) * (1.0 - x).powi(q);
        let mut dpoly = 0.0;
        if p > 0 {
            dpoly += p as f64 * x.powi(p - 1) * (1.0 - x).powi(q);
        }
        if q > 0 {
            dpoly -= q as f64 * x.powi(p) * (1.0 - x).powi(q - 1);
        }
        dpoly * t + poly * dt
    }
}

/// `coef * x1_factor(x1) * x2_factor(x2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    #[serde(default = "Term::one")]
    pub x1: Factor,
    #[serde(default = "Term::one")]
    pub x2: Factor,
}

impl Term {
    fn one() -> Factor {
        Factor::ONE
    }

    pub fn new(coef: f64, x1: Factor, x2: Factor) -> Self {
        Self { coef, x1, x2 }
    }
}

/// Sum of separable terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Expr {
    pub terms: Vec<Term>,
}

impl Expr {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: vec![Term::new(c, Factor::ONE, Factor::ONE)] }
    }

    pub fn value(&self, x1: f64, x2: f64) -> f64 {
        self.terms.iter().map(|t| t.coef * t.x1.value(x1) * t.x2.value(x2)).sum()
    }

    pub fn d1(&self, x1: f64, x2: f64) -> f64 {
        self.terms.iter().map(|t| t.coef * t.x1.derivative(x1) * t.x2.value(x2)).sum()
    }

    pub fn d2(&self, x1: f64, x2: f64) -> f64 {
        self.terms.iter().map(|t| t.coef * t.x1.value(x1) * t.x2.derivative(x2)).sum()
    }
}

/// Advection field `b = (b1, b2)` and potential `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCoefficients {
    pub b1: Expr,
    pub b2: Expr,
    pub c: Expr,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

fn default_quad_order() -> usize {
    DEFAULT_QUAD_ORDER
}

impl ModelCoefficients {
    /// `b1 = x1(1-x1)x2(1-x2)`, `b2 = -sin(pi x1) sin(pi x2)/2`, `c = 1 + x1 x2`.
    pub fn default_set() -> Self {
        Self {
            b1: Expr { terms: vec![Term::new(1.0, Factor::poly(1, 1), Factor::poly(1, 1))] },
            b2: Expr { terms: vec![Term::new(-0.5, Factor::sin(1.0), Factor::sin(1.0))] },
            c: Expr { terms: vec![Term::new(1.0, Factor::ONE, Factor::ONE), Term::new(1.0, Factor::poly(1, 0), Factor::poly(1, 0))] },
            quad_order: DEFAULT_QUAD_ORDER,
        }
    }

    pub fn laplacian() -> Self {
        Self { b1: Expr::zero(), b2: Expr::zero(), c: Expr::zero(), quad_order: DEFAULT_QUAD_ORDER }
    }

    pub fn unit_potential() -> Self {
        Self { c: Expr::constant(1.0), ..Self::laplacian() }
    }

    /// Divergence-free field from the stream function `x1^2(1-x1)^2 x2^2(1-x2)^2`, no potential.
    pub fn divergence_free() -> Self {
        let s = Factor::poly(2, 2);
        let ds = [Factor::poly(1, 2), Factor::poly(2, 1)];
        Self {
            b1: Expr { terms: vec![Term::new(2.0, s, ds[0]), Term::new(-2.0, s, ds[1])] },
            b2: Expr { terms: vec![Term::new(-2.0, ds[0], s), Term::new(2.0, ds[1], s)] },
            c: Expr::zero(),
            quad_order: DEFAULT_QUAD_ORDER,
        }
    }

    /// `b1 = sin(pi x1) x2(1-x2)`, `b2 = 0`, `c = 0`.
    pub fn shear() -> Self {
        Self {
            b1: Expr { terms: vec![Term::new(1.0, Factor::sin(1.0), Factor::poly(1, 1))] },
            b2: Expr::zero(),
            c: Expr::zero(),
            quad_order: DEFAULT_QUAD_ORDER,
        }
    }

    pub fn registry() -> Vec<(&'static str, ModelCoefficients)> {
        vec![
            ("default", Self::default_set()),
            ("laplacian", Self::laplacian()),
            ("unit-potential", Self::unit_potential()),
            ("divergence-free", Self::divergence_free()),
            ("shear", Self::shear()),
        ]
    }

    pub fn by_name(name: &str) -> ModelResult<Self> {
        Self::registry()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| ModelError::UnknownCoefficients(name.to_string()))
    }

    /// Largest `|b|` found on a boundary sample.
    pub fn boundary_advection(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..=200 {
            let t = i as f64 / 200.0;
            for (x1, x2) in [(t, 0.0), (t, 1.0), (0.0, t), (1.0, t)] {
                worst = worst.max(self.b1.value(x1, x2).hypot(self.b2.value(x1, x2)));
            }
        }
        worst
    }

    fn max_frequency(&self) -> f64 {
        [&self.b1, &self.b2, &self.c]
            .iter()
            .flat_map(|e| e.terms.iter())
            .map(|t| t.x1.freq.abs().max(t.x2.freq.abs()) + (t.x1.p + t.x1.q).max(t.x2.p + t.x2.q) as f64)
            .fold(0.0, f64::max)
    }
}

fn gl_nodes(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).unwrap());
    rule.as_node_weight_pairs().iter().map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
}

/// Integral tables over `[0, 1]` for `s_a(x) = sqrt(2) sin(a pi x)`.
struct Tables {
    kmax: usize,
    nodes: Vec<(f64, f64)>,
    sines: Vec<Vec<f64>>,
    dsines: Vec<Vec<f64>>,
}

impl Tables {
    fn new(kmax: usize, order: usize) -> Self {
        let nodes = gl_nodes(order);
        let sines = (0..=kmax)
            .map(|a| nodes.iter().map(|&(x, _)| SQRT_2 * (a as f64 * PI * x).sin()).collect())
            .collect();
        let dsines = (0..=kmax)
            .map(|a| nodes.iter().map(|&(x, _)| SQRT_2 * a as f64 * PI * (a as f64 * PI * x).cos()).collect())
            .collect();
        Self { kmax, nodes, sines, dsines }
    }

    /// `T[a][b] = \int s_a f s_b` (or `s_a f s_b'` when `deriv`), indices from 1.
    fn table(&self, f: impl Fn(f64) -> f64, deriv: bool) -> Vec<Vec<f64>> {
        let fw: Vec<f64> = self.nodes.iter().map(|&(x, w)| w * f(x)).collect();
        let right = if deriv { &self.dsines } else { &self.sines };
        let mut t = vec![vec![0.0; self.kmax + 1]; self.kmax + 1];
        for a in 1..=self.kmax {
            let sa: Vec<f64> = self.sines[a].iter().zip(&fw).map(|(s, w)| s * w).collect();
            for b in 1..=self.kmax {
                t[a][b] = sa.iter().zip(&right[b]).map(|(x, y)| x * y).sum();
            }
        }
        t
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Kind {
    Value,
    Derivative,
}

/// Builds `<phi_j, L phi_k>` for operators that are sums of separable pieces
/// `g(x1) h(x2) D phi` with `D` one of identity, d/dx1, d/dx2.
struct Assembler<'a> {
    tables: &'a Tables,
    cache: HashMap<TableKey, Vec<Vec<f64>>>,
}

type TableKey = (u32, u32, u8, u64, Kind, bool);

fn table_key(f: &Factor, kind: Kind, deriv: bool) -> TableKey {
    (f.p, f.q, f.trig as u8, f.freq.to_bits(), kind, deriv)
}

impl<'a> Assembler<'a> {
    fn new(tables: &'a Tables) -> Self {
        Self { tables, cache: HashMap::new() }
    }

    fn table(&mut self, f: Factor, kind: Kind, deriv: bool) -> &Vec<Vec<f64>> {
        let key = table_key(&f, kind, deriv);
        let tables = self.tables;
        self.cache.entry(key).or_insert_with(|| match kind {
            Kind::Value => tables.table(|x| f.value(x), deriv),
            Kind::Derivative => tables.table(|x| f.derivative(x), deriv),
        })
    }

    /// Accumulates `scale * coef * \int\int phi_j f1(x1) f2(x2) (D phi_k)`.
    fn add(
        &mut self,
        out: &mut [f64],
        idx: &[SineBasisIndex],
        coef: f64,
        f1: (Factor, Kind),
        f2: (Factor, Kind),
        derivative_axis: Option<usize>,
    ) {
        let t1 = self.table(f1.0, f1.1, derivative_axis == Some(0)).clone();
        let t2 = self.table(f2.0, f2.1, derivative_axis == Some(1)).clone();
        let n = idx.len();
        for (j, mj) in idx.iter().enumerate() {
            let row1 = &t1[mj.k1 as usize];
            let row2 = &t2[mj.k2 as usize];
            for (k, mk) in idx.iter().enumerate() {
                out[j * n + k] += coef * row1[mk.k1 as usize] * row2[mk.k2 as usize];
            }
        }
    }
}

fn assemble_parts(coeffs: &ModelCoefficients, idx: &[SineBasisIndex], order: usize) -> (Vec<f64>, Vec<f64>) {
    let kmax = idx.iter().map(|m| m.k1.max(m.k2)).max().unwrap_or(1) as usize;
    let tables = Tables::new(kmax, order);
    let mut asm = Assembler::new(&tables);
    let n = idx.len();
    let mut b = vec![0.0; n * n];
    let mut bstar = vec![0.0; n * n];
    let v = Kind::Value;
    let d = Kind::Derivative;
    for t in &coeffs.b1.terms {
        asm.add(&mut b, idx, t.coef, (t.x1, v), (t.x2, v), Some(0));
        asm.add(&mut bstar, idx, -t.coef, (t.x1, v), (t.x2, v), Some(0));
        asm.add(&mut bstar, idx, -t.coef, (t.x1, d), (t.x2, v), None);
    }
    for t in &coeffs.b2.terms {
        asm.add(&mut b, idx, t.coef, (t.x1, v), (t.x2, v), Some(1));
        asm.add(&mut bstar, idx, -t.coef, (t.x1, v), (t.x2, v), Some(1));
        asm.add(&mut bstar, idx, -t.coef, (t.x1, v), (t.x2, d), None);
    }
    for t in &coeffs.c.terms {
        asm.add(&mut b, idx, t.coef, (t.x1, v), (t.x2, v), None);
        asm.add(&mut bstar, idx, t.coef, (t.x1, v), (t.x2, v), None);
    }
    (b, bstar)
}

/// Gauss–Legendre order actually used for a reference space with largest
/// one-dimensional frequency `kmax`.
pub fn effective_quad_order(coeffs: &ModelCoefficients, kmax: usize) -> usize {
    coeffs.quad_order + 2 * kmax + 2 * coeffs.max_frequency().ceil() as usize
}

/// Assembled sine-basis model.
#[derive(Debug, Clone)]
pub struct SineModel {
    pub indices: Vec<SineBasisIndex>,
    pub lambda0: Vec<f64>,
    /// `<phi_j, b . grad phi_k + c phi_k>`.
    pub b_mat: ComplexMatrix,
    /// `<phi_j, -b . grad phi_k + (c - div b) phi_k>`.
    pub bstar_mat: ComplexMatrix,
    pub reference: Arc<ReferenceProblem>,
    pub quad_order: usize,
    /// Largest entry change under doubling of the quadrature order.
    pub quad_change: f64,
}

impl SineModel {
    /// Number of leading reference modes inside the truncation at `h`.
    pub fn truncation(&self, h: f64) -> ModelResult<usize> {
        let n = sine_indices(h)?.len();
        Ok(n.min(self.indices.len()))
    }

    /// First `count` coordinate vectors.
    pub fn coordinate_frame(&self, count: usize) -> ComplexMatrix {
        let n = self.indices.len();
        ComplexMatrix::from_fn(n, count, |i, j| C64::new(if i == j { 1.0 } else { 0.0 }, 0.0))
    }
}

fn to_matrix(v: &[f64], n: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(n, n, |i, j| C64::new(v[i * n + j], 0.0))
}

/// Reference operator on modes `|k| h_ref < 1`:
/// `A_ref = diag(lambda0) + B`, `G_H = I`, `G_V = diag(lambda0)`.
pub fn assemble_model(coeffs: &ModelCoefficients, h_ref: f64) -> ModelResult<SineModel> {
    let idx = sine_indices(h_ref)?;
    if idx.len() > MAX_REFERENCE_MODES {
        return Err(ModelError::TooManyModes(idx.len()));
    }
    let bnd = coeffs.boundary_advection();
    if bnd > 1e-12 {
        return Err(ModelError::BoundaryAdvection(bnd));
    }
    let n = idx.len();
    let kmax = idx.iter().map(|m| m.k1.max(m.k2)).max().unwrap_or(1) as usize;
    let order = effective_quad_order(coeffs, kmax);
    let (b, bstar) = assemble_parts(coeffs, &idx, order);
    let (b2, bstar2) = assemble_parts(coeffs, &idx, 2 * order);
    let change = b
        .iter()
        .zip(&b2)
        .chain(bstar.iter().zip(&bstar2))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if change > 1e-10 {
        return Err(ModelError::Quadrature(change));
    }
    let lambda0: Vec<f64> = idx.iter().map(|m| m.lambda0()).collect();
    let b_mat = to_matrix(&b, n);
    let bstar_mat = to_matrix(&bstar, n);
    let a_ref = &ComplexMatrix::diag_real(&lambda0) + &b_mat;
    let gram_h = Gram::identity(n, "H");
    let gram_v = Gram::diagonal(&lambda0, "V").expect("positive weights");
    let reference = ReferenceProblem::new(a_ref, gram_h, gram_v, Some(lambda0.clone()))?;
    Ok(SineModel {
        indices: idx,
        lambda0,
        b_mat,
        bstar_mat,
        reference: Arc::new(reference),
        quad_order: order,
        quad_change: change,
    })
}

/// Largest deviation of the quadrature mass table `\int s_a s_b` from the
/// identity for frequencies up to `kmax`.
pub fn sine_mass_defect(kmax: usize, order: usize) -> f64 {
    let t = Tables::new(kmax, order).table(|_| 1.0, false);
    let mut worst = 0.0f64;
    for a in 1..=kmax {
        for b in 1..=kmax {
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((t[a][b] - want).abs());
        }
    }
    worst
}

/// `||(I - Q_h) B^* A_0^{-1} Q_h||_H` in reference coordinates, with `Q_h` the
/// truncation to modes `|k| h < 1`.
pub fn gamma_ring(h: f64, model: &SineModel) -> ModelResult<f64> {
    let n_h = model.truncation(h)?;
    let n = model.indices.len();
    if n_h == 0 || n_h == n {
        return Ok(0.0);
    }
    let inv: Vec<C64> = model.lambda0[..n_h].iter().map(|l| C64::new(1.0 / l, 0.0)).collect();
    let block = model.bstar_mat.block(n_h, n, 0, n_h).scale_cols(&inv);
    Ok(block.norm2())
}

/// Matrix `Q (D + departure N) Q^H` with its exact eigen-structure.
#[derive(Debug, Clone)]
pub struct Testbed {
    pub reference: Arc<ReferenceProblem>,
    pub values: Vec<C64>,
    /// Unit right eigenvectors, column `k` for `values[k]`.
    pub right: ComplexMatrix,
    /// Unit left eigenvectors (`w^H A = lambda w^H`).
    pub left: ComplexMatrix,
    pub unitary: ComplexMatrix,
    pub triangular: ComplexMatrix,
}

pub fn complex_gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Haar-distributed unitary matrix.
pub fn random_unitary(n: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let g = complex_gaussian(n, n, rng);
    let qr = g.mat().qr();
    let mut q = qr_q(&g);
    let r = qr.thin_R();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            let z = q.get(i, j) * phase;
            q.set(i, j, z);
        }
    }
    q
}

/// Testbed with prescribed spectrum. The strictly upper part has independent
/// complex Gaussian entries scaled by `departure / sqrt(n)`.
pub fn nonnormal_testbed(spectrum: &[C64], departure: f64, rng: &mut impl Rng) -> ModelResult<Testbed> {
    schur_testbed(spectrum, departure, |_, _| 1.0, rng)
}

/// As [`nonnormal_testbed`], with entry `(i, j)` of the strictly upper part
/// further scaled by `sqrt(|l_i| |l_j|) / max |l|`, so the nonnormal part
/// decays along with a decaying spectrum.
pub fn graded_testbed(spectrum: &[C64], departure: f64, rng: &mut impl Rng) -> ModelResult<Testbed> {
    let top = spectrum.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(ModelError::BadSpectrum);
    }
    schur_testbed(spectrum, departure, |i, j| (spectrum[i].norm() * spectrum[j].norm()).sqrt() / top, rng)
}

fn schur_testbed(
    spectrum: &[C64],
    departure: f64,
    weight: impl Fn(usize, usize) -> f64,
    rng: &mut impl Rng,
) -> ModelResult<Testbed> {
    let n = spectrum.len();
    if n == 0 || !(departure >= 0.0) {
        return Err(ModelError::BadSpectrum);
    }
    for (i, a) in spectrum.iter().enumerate() {
        if !a.re.is_finite() || !a.im.is_finite() {
            return Err(ModelError::BadSpectrum);
        }
        if spectrum[..i].iter().any(|b| (a - b).norm() < 1e-12) {
            return Err(ModelError::BadSpectrum);
        }
    }
    let q = random_unitary(n, rng);
    let g = complex_gaussian(n, n, rng);
    let scale = departure / (n as f64).sqrt();
    let t = ComplexMatrix::from_fn(n, n, |i, j| {
        if i == j {
            spectrum[i]
        } else if j > i {
            g.get(i, j) * (scale * weight(i, j))
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let mut x = ComplexMatrix::zeros(n, n);
    let mut y = ComplexMatrix::zeros(n, n);
    for k in 0..n {
        let dk = spectrum[k];
        x.set(k, k, C64::new(1.0, 0.0));
        for i in (0..k).rev() {
            let mut s = C64::new(0.0, 0.0);
            for j in i + 1..=k {
                s += t.get(i, j) * x.get(j, k);
            }
            x.set(i, k, s / (dk - spectrum[i]));
        }
        y.set(k, k, C64::new(1.0, 0.0));
        for i in k + 1..n {
            let mut s = C64::new(0.0, 0.0);
            for j in k..i {
                s += t.get(j, i).conj() * y.get(j, k);
            }
            y.set(i, k, s / (dk.conj() - spectrum[i].conj()));
        }
    }
    let normalize = |m: ComplexMatrix| {
        let mut m = m;
        for j in 0..n {
            let nrm = crate::densekit::vec_norm(&m.col_vec(j));
            for i in 0..n {
                let z = m.get(i, j) / nrm;
                m.set(i, j, z);
            }
        }
        m
    };
    let right = normalize(q.matmul(&x));
    let left = normalize(q.matmul(&y));
    let a = q.matmul(&t).matmul(&q.adjoint());
    let reference = ReferenceProblem::new(a, Gram::identity(n, "H"), Gram::identity(n, "V"), None)?;
    Ok(Testbed { reference: Arc::new(reference), values: spectrum.to_vec(), right, left, unitary: q, triangular: t })
}

/// Unitary basis whose leading columns approximate `u` progressively: the
/// coefficients of `u` in this basis decay like `rho^j`. Nested spans of the
/// leading columns give subspaces whose gap to `u` shrinks geometrically.
pub fn graded_basis(u: &[C64], rho: f64, rng: &mut impl Rng) -> ComplexMatrix {
    let n = u.len();
    let p0 = random_unitary(n, rng);
    let mut c: Vec<C64> = (0..n)
        .map(|j| C64::from_polar(rho.powi(j as i32), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let cn = crate::densekit::vec_norm(&c);
    c.iter_mut().for_each(|z| *z /= cn);
    let v = p0.matmul(&ComplexMatrix::column(&c)).col_vec(0);
    let un = crate::densekit::vec_norm(u);
    let u: Vec<C64> = u.iter().map(|z| z / un).collect();
    let ip = crate::densekit::vec_dot(&u, &v);
    let phase = if ip.norm() > 0.0 { ip / ip.norm() } else { C64::new(1.0, 0.0) };
    let w: Vec<C64> = v.iter().zip(&u).map(|(a, b)| a - phase * b).collect();
    let wn2: f64 = w.iter().map(|z| z.norm_sqr()).sum();
    if wn2 < 1e-30 {
        return p0;
    }
    let wm = ComplexMatrix::column(&w);
    let h = &ComplexMatrix::identity(n) - &wm.matmul(&wm.adjoint()).scale_real(2.0 / wn2);
    h.matmul(&p0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn index_counts() {
        assert_eq!(sine_indices(1.0 / 3.0).unwrap(), vec![SineBasisIndex { k1: 1, k2: 1 }]);
        let four = sine_indices(0.25).unwrap();
        assert_eq!(
            four,
            vec![SineBasisIndex { k1: 1, k2: 1 }, SineBasisIndex { k1: 1, k2: 2 }, SineBasisIndex { k1: 2, k2: 1 }]
        );
        assert_eq!(sine_indices(1.0 / 8.0).unwrap().len(), 21);
        assert_eq!(sine_indices(1.0 / 12.0).unwrap().len(), 55);
        assert_eq!(sine_indices(1.0 / 24.0).unwrap().len(), 253);
        assert_eq!(sine_indices(1.0 / 48.0).unwrap().len(), 1081);
        assert!(sine_indices(0.0).is_err());
        assert!(sine_indices(0.6).is_err());
    }

    #[test]
    fn factor_derivative_matches_difference_quotient() {
        let f = Factor { p: 2, q: 1, trig: Trig::Cos, freq: 1.5 };
        let x = 0.37;
        let h = 1e-6;
        let fd = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
        assert!((fd - f.derivative(x)).abs() < 1e-8);
    }

    #[test]
    fn laplacian_is_diagonal() {
        let m = assemble_model(&ModelCoefficients::laplacian(), 0.125).unwrap();
        assert!(m.b_mat.norm_max() == 0.0);
        assert!((m.reference.a_ref.get(0, 0).re - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn unit_potential_shifts_by_identity() {
        let m = assemble_model(&ModelCoefficients::unit_potential(), 0.125).unwrap();
        let n = m.indices.len();
        assert!((&m.b_mat - &ComplexMatrix::identity(n)).norm_max() < 1e-12);
    }

    #[test]
    fn non_vanishing_advection_rejected() {
        let mut c = ModelCoefficients::laplacian();
        c.b1 = Expr::constant(1.0);
        assert!(matches!(assemble_model(&c, 0.25), Err(ModelError::BoundaryAdvection(_))));
    }

    #[test]
    fn testbed_eigenpairs_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spectrum: Vec<C64> = (1..=8).map(|k| C64::new(k as f64, 0.0)).collect();
        let tb = nonnormal_testbed(&spectrum, 0.7, &mut rng).unwrap();
        let a = &tb.reference.a_ref;
        for k in 0..8 {
            let x = tb.right.col_range(k, k + 1);
            let res = &a.matmul(&x) - &x.scale(spectrum[k]);
            assert!(res.norm_fro() < 1e-12);
            let y = tb.left.col_range(k, k + 1);
            let res = &y.adjoint().matmul(a) - &y.adjoint().scale(spectrum[k]);
            assert!(res.norm_fro() < 1e-12);
        }
    }

    #[test]
    fn graded_basis_is_unitary_and_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u: Vec<C64> = (0..10).map(|i| C64::new(1.0, i as f64 * 0.1)).collect();
        let p = graded_basis(&u, 0.5, &mut rng);
        let defect = (&p.adjoint_mul(&p) - &ComplexMatrix::identity(10)).norm_fro();
        assert!(defect < 1e-12);
        let coeffs = p.adjoint_mul(&ComplexMatrix::column(&u));
        let c0 = coeffs.get(0, 0).norm();
        let c5 = coeffs.get(5, 0).norm();
        assert!((c5 / c0 - 0.5f64.powi(5)).abs() < 1e-10);
    }
}
