use std::ffi::CString;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use galerkin_sc_ffi::*;

fn last_error() -> String {
    let n = gsc_last_error_length();
    let mut buf = vec![0 as std::ffi::c_char; n + 1];
    let full = unsafe { gsc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(full, n);
    let bytes: Vec<u8> = buf[..n].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn real(rows: usize, cols: usize, data: &[f64]) -> *mut GscMatrix {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { gsc_matrix_new(rows, cols, data.as_ptr(), ptr::null(), &mut out) }, GscStatus::Ok);
    out
}

fn read(m: *const GscMatrix) -> (usize, usize, Vec<f64>, Vec<f64>) {
    let (r, c) = unsafe { (gsc_matrix_rows(m), gsc_matrix_cols(m)) };
    let mut re = vec![0.0; r * c];
    let mut im = vec![0.0; r * c];
    assert_eq!(unsafe { gsc_matrix_read(m, re.as_mut_ptr(), im.as_mut_ptr()) }, GscStatus::Ok);
    (r, c, re, im)
}

#[test]
fn matrix_round_trip() {
    let re = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let im = [0.5, 0.0, -0.5, 0.0, 1.0, 0.0];
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { gsc_matrix_new(2, 3, re.as_ptr(), im.as_ptr(), &mut m) }, GscStatus::Ok);
    let (r, c, got_re, got_im) = read(m);
    assert_eq!((r, c), (2, 3));
    assert_eq!(got_re, re);
    assert_eq!(got_im, im);
    unsafe { gsc_matrix_free(m) };
}

#[test]
fn null_and_invalid_inputs_report_errors() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { gsc_matrix_new(2, 2, ptr::null(), ptr::null(), &mut out) }, GscStatus::NullPointer);
    assert!(last_error().contains("re"));
    let nan = [f64::NAN, 0.0, 0.0, 1.0];
    assert_eq!(unsafe { gsc_matrix_new(2, 2, nan.as_ptr(), ptr::null(), &mut out) }, GscStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let mut x = 0.0;
    assert_eq!(unsafe { gsc_sep(ptr::null(), ptr::null(), &mut x) }, GscStatus::NullPointer);
    unsafe { gsc_matrix_free(ptr::null_mut()) };
    assert_eq!(unsafe { gsc_matrix_rows(ptr::null()) }, 0);
}

#[test]
fn error_clears_on_success() {
    let mut x = 0.0;
    assert_ne!(unsafe { gsc_sep(ptr::null(), ptr::null(), &mut x) }, GscStatus::Ok);
    assert!(gsc_last_error_length() > 0);
    let a = real(1, 1, &[3.0]);
    let b = real(1, 1, &[1.0]);
    assert_eq!(unsafe { gsc_sep(a, b, &mut x) }, GscStatus::Ok);
    assert_eq!(x, 2.0);
    assert_eq!(gsc_last_error_length(), 0);
    unsafe { gsc_matrix_free(a) };
    unsafe { gsc_matrix_free(b) };
}

#[test]
fn truncated_error_buffer_is_terminated() {
    let mut x = 0.0;
    unsafe { gsc_sep(ptr::null(), ptr::null(), &mut x) };
    let mut buf = [1 as std::ffi::c_char; 4];
    let n = unsafe { gsc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 3);
    assert_eq!(buf[3], 0);
}

#[test]
fn gap_between_coordinate_lines() {
    let e1 = real(2, 1, &[1.0, 0.0]);
    let diag = real(2, 1, &[1.0, 1.0]);
    let mut g = 0.0;
    assert_eq!(unsafe { gsc_containment_gap(e1, diag, &mut g) }, GscStatus::Ok);
    assert!((g - 0.5f64.sqrt()).abs() < 1e-14);
    assert_eq!(unsafe { gsc_containment_gap(e1, e1, &mut g) }, GscStatus::Ok);
    assert!(g < 1e-14);
    unsafe { gsc_matrix_free(e1) };
    unsafe { gsc_matrix_free(diag) };
}

#[test]
fn sylvester_solution_satisfies_equation() {
    let l1 = real(2, 2, &[4.0, 0.0, 1.0, 5.0]);
    let l2 = real(1, 1, &[1.0]);
    let m = real(2, 1, &[1.0, 2.0]);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { gsc_sylvester_solve(l1, l2, m, &mut s) }, GscStatus::Ok);
    let (_, _, x, _) = read(s);
    // [[4,1],[0,5]] x - x = [1,2]
    assert!((3.0 * x[0] + x[1] - 1.0).abs() < 1e-13);
    assert!((4.0 * x[1] - 2.0).abs() < 1e-13);
    for h in [l1, l2, m, s] {
        unsafe { gsc_matrix_free(h) };
    }
}

#[test]
fn overlapping_spectra_are_a_computation_error() {
    let l = real(1, 1, &[2.0]);
    let m = real(1, 1, &[1.0]);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { gsc_sylvester_solve(l, l, m, &mut s) }, GscStatus::Computation);
    assert!(s.is_null());
    unsafe { gsc_matrix_free(l) };
    unsafe { gsc_matrix_free(m) };
}

#[test]
fn projector_of_diagonal_block() {
    let l = real(2, 2, &[1.0, 0.0, 1.0, 3.0]);
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { gsc_dunford_projector(l, 1.0, 0.0, 0.5, 32, &mut p) }, GscStatus::Ok);
    let (_, _, re, im) = read(p);
    // Spectral projector onto the eigenvalue 1 of [[1,1],[0,3]].
    let want = [1.0, 0.0, -0.5, 0.0];
    for k in 0..4 {
        assert!((re[k] - want[k]).abs() < 1e-10 && im[k].abs() < 1e-10);
    }
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { gsc_dunford_projector(l, 0.0, 0.0, -1.0, 32, &mut bad) }, GscStatus::InvalidArgument);
    unsafe { gsc_matrix_free(l) };
    unsafe { gsc_matrix_free(p) };
}

#[test]
fn nearest_frame_of_itself() {
    let s = real(3, 1, &[0.6, 0.8, 0.0]);
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { gsc_nearest_frame(s, s, &mut f) }, GscStatus::Ok);
    let (r, c, re, _) = read(f);
    assert_eq!((r, c), (3, 1));
    assert!((re[0] - 0.6).abs() < 1e-14 && (re[1] - 0.8).abs() < 1e-14);
    unsafe { gsc_matrix_free(s) };
    unsafe { gsc_matrix_free(f) };
}

#[test]
fn rate_fit_recovers_power_law() {
    let h = [0.5, 0.25, 0.125, 0.0625];
    let v: Vec<f64> = h.iter().map(|h: &f64| 7.0 * h.powi(3)).collect();
    let (mut slope, mut icpt) = (0.0, 0.0);
    assert_eq!(unsafe { gsc_fit_rate(h.as_ptr(), v.as_ptr(), 4, &mut slope, &mut icpt) }, GscStatus::Ok);
    assert!((slope - 3.0).abs() < 1e-12);
    assert!((icpt - 7f64.ln()).abs() < 1e-12);
    assert_eq!(unsafe { gsc_fit_rate(h.as_ptr(), v.as_ptr(), 1, &mut slope, &mut icpt) }, GscStatus::InvalidArgument);
}

#[test]
fn krylov_run_on_diagonal_matrix() {
    let a = real(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
    let v = real(3, 1, &[1.0, 1.0, 1.0]);
    for w in [ptr::null_mut(), v] {
        let mut run = ptr::null_mut();
        assert_eq!(unsafe { gsc_krylov_run(a, v, w, 3, &mut run) }, GscStatus::Ok);
        assert_eq!(unsafe { gsc_krylov_run_steps(run) }, 3);
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { gsc_krylov_run_projected(run, 3, &mut h) }, GscStatus::Ok);
        let (_, _, re, _) = read(h);
        let trace = re[0] + re[4] + re[8];
        assert!((trace - 6.0).abs() < 1e-12);
        assert_eq!(unsafe { gsc_krylov_run_projected(run, 9, &mut h) }, GscStatus::InvalidArgument);
        unsafe { gsc_krylov_run_free(run) };
        unsafe { gsc_matrix_free(h) };
    }
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { gsc_krylov_run(a, a, ptr::null(), 3, &mut run) }, GscStatus::InvalidArgument);
    unsafe { gsc_matrix_free(a) };
    unsafe { gsc_matrix_free(v) };
}

#[test]
fn study_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(r#"{"kind": "sep", "sep": {"seeds": 3}}"#).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut passed = false;
    assert_eq!(unsafe { gsc_run_study(cfg.as_ptr(), out.as_ptr(), &mut passed) }, GscStatus::Ok);
    assert!(passed);
    assert!(dir.path().join("records.csv").exists());
    assert!(dir.path().join("summary.json").exists());
    let bad = CString::new(r#"{"kind": "sep", "nonsense": 1}"#).unwrap();
    assert_eq!(unsafe { gsc_run_study(bad.as_ptr(), out.as_ptr(), &mut passed) }, GscStatus::InvalidArgument);
}

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let Ok(cc) = which_cc() else {
        println!("no C compiler found; skipping");
        return;
    };
    let lib = target_dir().join("libgalerkin_sc_ffi.a");
    if !lib.exists() {
        println!("static library not built at {}; skipping", lib.display());
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        r#"#include "galerkin_sc.h"
#include <stdio.h>
int main(void) {
    double a = 3.0, b = 1.0, sep = 0.0;
    GscMatrix *l1 = NULL, *l2 = NULL;
    if (gsc_matrix_new(1, 1, &a, NULL, &l1) != GSC_STATUS_OK) return 1;
    if (gsc_matrix_new(1, 1, &b, NULL, &l2) != GSC_STATUS_OK) return 1;
    if (gsc_sep(l1, l2, &sep) != GSC_STATUS_OK) return 1;
    if (gsc_sep(NULL, l2, &sep) != GSC_STATUS_NULL_POINTER) return 1;
    char msg[128];
    gsc_last_error_message(msg, sizeof msg);
    printf("%g %s\n", sep, msg);
    gsc_matrix_free(l1);
    gsc_matrix_free(l2);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("probe");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C probe failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("2 "), "{text}");
    assert!(text.contains("null"), "{text}");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
