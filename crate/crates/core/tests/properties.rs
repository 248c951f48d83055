//! Randomized invariants of every module. Matrices come from a seeded
//! generator so each proptest case is a reproducible instance.

use std::f64::consts::PI;
use std::sync::Arc;

use galerkin_sc::densekit::{eig_dense, eig_generalized, singular_values, ComplexMatrix, C64};
use galerkin_sc::galerkin::{
    assemble, build_ph, cluster_and_diagnose, ph_norm_v, shift_invariance_gap, ReferenceProblem, TargetEigenpair,
};
use galerkin_sc::harness::{
    bounded_instance, graded_krylov_instance, krylov_instance, run_bounded, run_krylov, sep_instance, signal_decays,
    BoundedParams, KrylovParams, SepParams, StudyConfig, StudyKind,
};
use galerkin_sc::krylov::{arnoldi, bilanczos, fit_sandwich, lanczos_gap_holds, step_diagnostics};
use galerkin_sc::modelproblem::{
    assemble_model, complex_gaussian, random_unitary, sine_mass_defect, ModelCoefficients,
};
use galerkin_sc::spectral::{dunford_projector, epsilon_on_contour, place_contour, trapezoid_projector, Contour};
use galerkin_sc::subspaces::{
    containment_gap, oblique_projector, orthogonal_projector, orthonormalize, projector_norms, Gram, Subspace,
};
use galerkin_sc::sylvsep::{
    numrange_distance, sep_bruteforce, sep_lower_pseudo, sylvester_contour, sylvester_oracle, sylvester_semigroup,
    SemigroupOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dense_gram(n: usize, r: &mut ChaCha8Rng) -> Gram {
    let f = complex_gaussian(n, n, r);
    Gram::dense(&(&f.adjoint_mul(&f) + &ComplexMatrix::identity(n).scale_real(0.2)), "G").unwrap()
}

fn frame(n: usize, k: usize, gram: &Gram, r: &mut ChaCha8Rng) -> Subspace {
    orthonormalize(&complex_gaussian(n, k, r), gram).unwrap()
}

fn normal_matrix(values: &[C64], r: &mut ChaCha8Rng) -> (ComplexMatrix, ComplexMatrix) {
    let u = random_unitary(values.len(), r);
    (u.matmul(&ComplexMatrix::diag(values)).matmul(&u.adjoint()), u)
}

/// Greedy matching distance between two multisets of eigenvalues.
fn multiset_distance(a: &[C64], b: &[C64]) -> f64 {
    let mut pool = b.to_vec();
    let mut worst = 0.0f64;
    for x in a {
        let (k, d) = pool
            .iter()
            .enumerate()
            .map(|(k, y)| (k, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .unwrap();
        worst = worst.max(d);
        pool.swap_remove(k);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unitary_singular_values_are_one(seed in any::<u64>(), n in 1usize..12) {
        let q = random_unitary(n, &mut rng(seed));
        for s in singular_values(&q).unwrap() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn generalized_with_identity_matches_standard(seed in any::<u64>()) {
        let a = complex_gaussian(10, 10, &mut rng(seed));
        let std = eig_dense(&a, false).unwrap().values;
        let gen = eig_generalized(&a, &ComplexMatrix::identity(10), false).unwrap().values;
        prop_assert!(multiset_distance(&std, &gen) <= 1e-9 * a.norm2().max(1.0));
    }

    #[test]
    fn spectral_norm_bounds_products(seed in any::<u64>(), rows in 1usize..9, cols in 1usize..9) {
        let mut r = rng(seed);
        let m = complex_gaussian(rows, cols, &mut r);
        let nrm = m.norm2();
        for _ in 0..100 {
            let x = complex_gaussian(cols, 1, &mut r);
            prop_assert!(m.matmul(&x).norm_fro() <= nrm * x.norm_fro() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gap_is_symmetric_for_equal_dimensions(seed in any::<u64>(), n in 2usize..10, k in 1usize..5) {
        prop_assume!(k < n);
        let mut r = rng(seed);
        let g = dense_gram(n, &mut r);
        let (m, p) = (frame(n, k, &g, &mut r), frame(n, k, &g, &mut r));
        let d1 = containment_gap(&m, &p, &g).unwrap();
        let d2 = containment_gap(&p, &m, &g).unwrap();
        prop_assert!((d1 - d2).abs() <= 1e-11, "{d1} vs {d2}");
    }

    #[test]
    fn gap_equals_projector_composition(seed in any::<u64>(), n in 2usize..10, k in 1usize..6, j in 1usize..6) {
        prop_assume!(k < n && j < n);
        let mut r = rng(seed);
        let g = dense_gram(n, &mut r);
        let (m, p) = (frame(n, k, &g, &mut r), frame(n, j, &g, &mut r));
        let pm = orthogonal_projector(&m, &g).unwrap();
        let pn = orthogonal_projector(&p, &g).unwrap();
        let comp = (&ComplexMatrix::identity(n) - &pn).matmul(&pm);
        let via = g.op_norm(&comp);
        let gap = containment_gap(&m, &p, &g).unwrap();
        prop_assert!((gap - via).abs() <= 1e-11, "{gap} vs {via}");
    }

    #[test]
    fn oblique_sandwich_and_complement(seed in any::<u64>(), n in 2usize..12, k in 1usize..8) {
        prop_assume!(k < n);
        let mut r = rng(seed);
        let g = dense_gram(n, &mut r);
        let (range, test) = (frame(n, k, &g, &mut r), frame(n, k, &g, &mut r));
        let z = match oblique_projector(&range, &test, &g) {
            Ok(z) => z,
            Err(_) => return Err(TestCaseError::reject("test space nearly orthogonal")),
        };
        let (nz, nc) = projector_norms(&z, &g).unwrap();
        prop_assert!((nz - nc).abs() <= 1e-9 * nz);
        let pi = orthogonal_projector(&range, &g).unwrap();
        let id = ComplexMatrix::identity(n);
        let u = complex_gaussian(n, 1, &mut r);
        let iz = g.frame_norm(&(&id - &z).matmul(&u));
        let ipi = g.frame_norm(&(&id - &pi).matmul(&u));
        prop_assert!(iz / nz <= ipi + 1e-11);
        prop_assert!(ipi <= iz + 1e-11);
    }

    #[test]
    fn oblique_with_equal_spaces_is_orthogonal(seed in any::<u64>(), n in 2usize..10, k in 1usize..6) {
        prop_assume!(k < n);
        let mut r = rng(seed);
        let g = dense_gram(n, &mut r);
        let s = frame(n, k, &g, &mut r);
        let z = oblique_projector(&s, &s, &g).unwrap();
        let pi = orthogonal_projector(&s, &g).unwrap();
        prop_assert!((&z - &pi).norm2() <= 1e-11 * pi.norm2().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dunford_commutes_and_completes(seed in any::<u64>(), n in 3usize..9) {
        let mut r = rng(seed);
        let l = complex_gaussian(n, n, &mut r);
        let values = eig_dense(&l, false).unwrap().values;
        let gram = Gram::identity(n, "H");
        let i = r.gen_range(0..n);
        let others: Vec<C64> = values.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, z)| *z).collect();
        let contour = match place_contour(&values[i..=i], &others, false, 32) {
            Ok(c) => c,
            Err(_) => return Err(TestCaseError::reject("cluster not separable")),
        };
        let e = match dunford_projector(&l, &contour, &gram) {
            Ok(e) => e.matrix,
            Err(_) => return Err(TestCaseError::reject("eigenvalue near the contour")),
        };
        prop_assert!((&e.matmul(&l) - &l.matmul(&e)).norm2() <= 1e-9 * l.norm2() * e.norm2().max(1.0));
        let rmax = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let all = Contour::new(C64::new(0.0, 0.0), 1.5 * rmax + 1.0, 32).unwrap();
        let full = dunford_projector(&l, &all, &gram).unwrap().matrix;
        prop_assert!((&full - &ComplexMatrix::identity(n)).norm2() <= 1e-9);
    }

    #[test]
    fn trapezoid_converges_geometrically(seed in any::<u64>(), inside in 1usize..4, outside in 1usize..6) {
        let mut r = rng(seed);
        let mut values = Vec::new();
        for _ in 0..inside {
            values.push(C64::from_polar(0.4 * r.gen::<f64>(), r.gen_range(0.0..2.0 * PI)));
        }
        for _ in 0..outside {
            values.push(C64::from_polar(2.5 + r.gen::<f64>(), r.gen_range(0.0..2.0 * PI)));
        }
        let (l, u) = normal_matrix(&values, &mut r);
        let us = u.col_range(0, inside);
        let exact = us.matmul(&us.adjoint());
        let mut prev = f64::INFINITY;
        for q in [8usize, 16, 32, 64] {
            let e = trapezoid_projector(&l, &Contour::new(C64::new(0.0, 0.0), 1.0, q).unwrap()).unwrap();
            let err = (&e - &exact).norm2();
            if prev > 1e-12 {
                prop_assert!(err <= prev / 10.0 || err <= 1e-12, "q = {q}: {err:e} after {prev:e}");
            }
            prev = err;
        }
    }

    #[test]
    fn normal_pseudospectral_radius_is_distance(seed in any::<u64>(), n in 2usize..8) {
        let mut r = rng(seed);
        let values: Vec<C64> = (0..n).map(|_| C64::new(r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0))).collect();
        let (l, _) = normal_matrix(&values, &mut r);
        let contour = Contour::new(C64::new(r.gen_range(-1.0..1.0), 0.0), r.gen_range(0.5..1.5), 16).unwrap();
        let eps = match epsilon_on_contour(&l, &contour, &Gram::identity(n, "H")) {
            Ok(e) => e,
            Err(_) => return Err(TestCaseError::reject("node on the spectrum")),
        };
        let want = contour
            .points()
            .iter()
            .flat_map(|z| values.iter().map(move |v| (z - v).norm()))
            .fold(f64::INFINITY, f64::min);
        prop_assert!((eps - want).abs() <= 1e-10, "{eps} vs {want}");
    }

    #[test]
    fn separation_bounds_hold(seed in any::<u64>(), n1 in 1usize..6, n2 in 1usize..6, offset in 3.0f64..8.0) {
        let p = SepParams { n1, n2, offset, ..SepParams::default() };
        let (l1, l2, m) = sep_instance(seed, &p).unwrap();
        let sep = sep_bruteforce(&l1, &l2).unwrap();
        let s1 = eig_dense(&l1, false).unwrap().values;
        let s2 = eig_dense(&l2, false).unwrap().values;
        let contour = place_contour(&s2, &s1, false, 64).unwrap();
        let (bound, _, _) = sep_lower_pseudo(&l1, &l2, &contour).unwrap();
        prop_assert!(bound <= sep * (1.0 + 1e-6), "{bound} > {sep}");
        let nr = numrange_distance(&l1, &l2, 256).unwrap();
        prop_assert!(nr.distance <= sep * (1.0 + 1e-6));
        let oracle = sylvester_oracle(&l1, &l2, &m).unwrap();
        let scale = oracle.norm_fro();
        let (sc, _) = sylvester_contour(&l1, &l2, &m, &contour).unwrap();
        prop_assert!((&sc - &oracle).norm_fro() <= 1e-7 * scale);
        if nr.distance > 0.0 {
            let opts = SemigroupOptions::default();
            let sg = sylvester_semigroup(&l1, &l2, &m, &opts).unwrap();
            prop_assert!((&sg.s - &oracle).norm_fro() <= 1e-7 * scale);
            prop_assert!((&sg.s - &sc).norm_fro() <= 1e-7 * scale);
            let finer = sylvester_semigroup(&l1, &l2, &m, &SemigroupOptions { tail: opts.tail / 2.0, ..opts }).unwrap();
            prop_assert!((&finer.s - &sg.s).norm_fro() <= sg.tail_bound + 1e-12 * scale);
        }
    }

    #[test]
    fn scalar_sep_is_distance(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -5.0f64..5.0) {
        let l1 = ComplexMatrix::diag(&[C64::new(a, b)]);
        let l2 = ComplexMatrix::diag(&[C64::new(c, d)]);
        let want = (C64::new(a, b) - C64::new(c, d)).norm();
        prop_assume!(want > 1e-6);
        prop_assert_eq!(sep_bruteforce(&l1, &l2).unwrap(), want);
    }

    #[test]
    fn galerkin_projector_identities(seed in any::<u64>(), dim in 6usize..30, tau_re in -2.0f64..2.0, tau_im in -2.0f64..2.0) {
        let p = BoundedParams { n: 36, ..BoundedParams::default() };
        let inst = bounded_instance(seed, &p, 1.0).unwrap();
        let phi = inst.basis.col_range(0, dim);
        let setup = assemble(&inst.testbed.reference, &phi, &phi).unwrap();
        let gv = &inst.testbed.reference.gram_v;
        let ph = build_ph(&setup).unwrap();
        let (np, nc) = projector_norms(&ph, gv).unwrap();
        prop_assert!((np - nc).abs() <= 1e-9 * np);
        prop_assert!((ph_norm_v(&setup).unwrap() - np).abs() <= 1e-9 * np);
        let rec = match cluster_and_diagnose(&setup, &inst.target, 1.0 / dim as f64) {
            Ok(r) => r,
            Err(_) => return Err(TestCaseError::reject("no discrete eigenvalue in the contour")),
        };
        prop_assert!(rec.gap_us <= rec.gap_uuh + 1e-12);
        prop_assert!(np <= inst.testbed.reference.form_bound() / rec.beta * (1.0 + 1e-10));
        let tau = C64::new(tau_re, tau_im);
        match shift_invariance_gap(&setup, &inst.target.contour, tau) {
            Ok(g) => prop_assert!(g < 1e-9, "gap {g:e} at tau {tau}"),
            Err(_) => return Err(TestCaseError::reject("shifted pencil singular")),
        }
    }

    #[test]
    fn arnoldi_of_hermitian_is_lanczos(seed in any::<u64>(), n in 3usize..16) {
        let mut r = rng(seed);
        let f = complex_gaussian(n, n, &mut r);
        let a = (&f + &f.adjoint()).scale_real(0.5);
        let v = complex_gaussian(n, 1, &mut r).col_vec(0);
        let ar = arnoldi(&a, &v, n).unwrap();
        let bl = bilanczos(&a, &v, &v, n).unwrap();
        let l = ar.len().min(bl.len());
        let h = ar.projected(l).unwrap();
        let j = bl.projected(l).unwrap();
        let scale = a.norm2();
        for p in 0..l {
            for q in 0..l {
                if p > q + 1 || q > p + 1 {
                    prop_assert!(h.get(p, q).norm() <= 1e-10 * scale);
                }
            }
        }
        prop_assert!((&h - &j).norm_max() <= 1e-8 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lanczos_gap_lemma_and_sandwich(seed in any::<u64>()) {
        let p = KrylovParams::default();
        let inst = krylov_instance(seed, &p).unwrap();
        let run = bilanczos(&inst.testbed.reference.a_ref, &inst.v1, &inst.w1, p.n).unwrap();
        let w = match run.w_norm().unwrap() {
            Some(w) => w,
            None => return Err(TestCaseError::reject("run ended early")),
        };
        let mut diags = Vec::new();
        for l in 1..=run.len() {
            let d = step_diagnostics(&run, l, &inst.target).unwrap();
            // The reference eigenvector is accurate to about 1e-14, so gaps
            // below GAP_RESOLUTION are not resolved.
            prop_assert!(lanczos_gap_holds(&d, w, w * (1.0 + std::f64::consts::SQRT_2) * GAP_RESOLUTION), "step {l}");
            prop_assert!((d.middle - d.middle_closed).abs() <= 1e-9 * inst.testbed.reference.a_ref.norm2().max(1.0));
            diags.push(d);
        }
        let (c0, c1) = fit_sandwich(&diags).unwrap();
        prop_assert!(c0 > 0.0 && c1.is_finite());
        for d in diags.iter().filter(|d| d.converged && d.ritz_defect > 0.0) {
            prop_assert!(d.middle <= c1 * d.ritz_defect + d.eig_err * d.ritz_norm + 1e-12);
            prop_assert!(c0 * d.ritz_defect <= d.middle * (1.0 + 1e-12));
        }
    }

}

const GAP_RESOLUTION: f64 = 1e-13;

/// Fixed seed block so the outcome is reproducible; the per-run signal has
/// measured exceptions on this family.
#[test]
fn superconvergence_signal_where_bound_decays() {
    let p = KrylovParams::default();
    let mut qualifying = 0;
    let mut exceptions = Vec::new();
    for seed in 0..2000u64 {
        let inst = graded_krylov_instance(seed, &p).unwrap();
        let run = bilanczos(&inst.testbed.reference.a_ref, &inst.v1, &inst.w1, p.n).unwrap();
        let diags: Vec<_> = (1..=run.len()).map(|l| step_diagnostics(&run, l, &inst.target).unwrap()).collect();
        if let Some(decays) = signal_decays(&diags) {
            qualifying += 1;
            if !decays {
                exceptions.push(seed);
            }
        }
    }
    println!("signal: {qualifying} qualifying runs, exceptions at seeds {exceptions:?}");
    assert!(qualifying > 0);
    assert!(exceptions.is_empty(), "signal fails on {} of {qualifying} runs: {exceptions:?}", exceptions.len());
}

#[test]
fn sine_mass_table_is_identity() {
    for kmax in [4, 12, 24] {
        let order = galerkin_sc::modelproblem::DEFAULT_QUAD_ORDER + 2 * kmax;
        assert!(sine_mass_defect(kmax, order) < 1e-12);
    }
}

#[test]
fn divergence_free_advection_is_skew() {
    let model = assemble_model(&ModelCoefficients::divergence_free(), 1.0 / 8.0).unwrap();
    let b = &model.b_mat;
    assert!((&b.adjoint() + b).norm_max() <= 1e-10 * b.norm_max().max(1.0));
    assert!((&model.bstar_mat - &b.adjoint()).norm_max() <= 1e-10);
}

#[test]
fn eigenvalues_stay_near_unperturbed_levels() {
    let mut coeffs = ModelCoefficients::default_set();
    for e in [&mut coeffs.b1, &mut coeffs.b2, &mut coeffs.c] {
        e.terms.iter_mut().for_each(|t| t.coef *= 0.1);
    }
    let model = assemble_model(&coeffs, 1.0 / 12.0).unwrap();
    let radius = model.b_mat.norm2();
    for z in eig_dense(&model.reference.a_ref, false).unwrap().values {
        let d = model.lambda0.iter().map(|l| (z - l).norm()).fold(f64::INFINITY, f64::min);
        assert!(d <= radius * (1.0 + 1e-10), "{z} is {d} from every level, radius {radius}");
    }
}

#[test]
fn studies_are_deterministic() {
    let cfg = StudyConfig { seed: 11, ..StudyConfig::for_kind(StudyKind::Bounded) };
    let a = run_bounded(&cfg).unwrap().csv_string().unwrap();
    let b = run_bounded(&cfg).unwrap().csv_string().unwrap();
    assert_eq!(a, b);
    let mut k = StudyConfig { seed: 3, ..StudyConfig::for_kind(StudyKind::Krylov) };
    k.krylov.seeds = 3;
    assert_eq!(run_krylov(&k).unwrap().csv_string().unwrap(), run_krylov(&k).unwrap().csv_string().unwrap());
}

#[test]
fn rows_satisfy_invariants_or_are_flagged() {
    for seed in 0..5 {
        let cfg = StudyConfig { seed, ..StudyConfig::for_kind(StudyKind::Bounded) };
        for rec in run_bounded(&cfg).unwrap().records {
            let flags: Vec<String> = serde_json::from_value(rec["flags"].clone()).unwrap_or_default();
            let ok = rec["gap_us"].as_f64().unwrap() <= rec["gap_uuh"].as_f64().unwrap() + 1e-12;
            assert!(ok || flags.iter().any(|f| f == "sandwich_violation"));
        }
    }
}

#[test]
fn exact_reference_capture_has_zero_defect() {
    let mut r = rng(4);
    let spectrum: Vec<C64> = (0..8).map(|k| C64::new(k as f64 + 1.0, 0.0)).collect();
    let tb = galerkin_sc::modelproblem::nonnormal_testbed(&spectrum, 0.3, &mut r).unwrap();
    let reference: Arc<ReferenceProblem> = tb.reference.clone();
    let target = TargetEigenpair::from_reference(&reference, spectrum[0], 1, 1.0).unwrap();
    let phi = tb.right.col_range(0, 1).hcat(&complex_gaussian(8, 2, &mut r));
    let setup = assemble(&reference, &phi, &phi).unwrap();
    let rec = cluster_and_diagnose(&setup, &target, 1.0 / 3.0).unwrap();
    assert!(rec.gap_us <= 1e-10 && rec.proj_defect <= 1e-10);
}
