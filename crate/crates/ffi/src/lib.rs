//! C ABI for the galerkin-sc diagnostics.
//!
//! Matrices and Krylov runs cross the boundary as opaque handles. Every
//! fallible call returns a `GscStatus`; on failure the message is kept per
//! thread and read back with `gsc_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use galerkin_sc::densekit::{ComplexMatrix, C64};
use galerkin_sc::harness::{fit_rate, run_study, HarnessError, OutputFormat, StudyConfig};
use galerkin_sc::krylov::{arnoldi, bilanczos, KrylovRun};
use galerkin_sc::spectral::{dunford_projector, Contour};
use galerkin_sc::subspaces::{containment_gap, nearest_frame, orthonormalize, Gram};
use galerkin_sc::sylvsep::{sep_bruteforce, sylvester_oracle};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Computation = 3,
    Io = 4,
    Panic = 5,
}

/// Dense complex matrix.
pub struct GscMatrix(ComplexMatrix);

/// Completed Arnoldi or two-sided Lanczos recursion.
pub struct GscKrylovRun(KrylovRun);

struct Failure(GscStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Self(GscStatus::InvalidArgument, msg.into())
    }

    fn compute(e: impl std::fmt::Display) -> Self {
        Self(GscStatus::Computation, e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let status = match e {
            HarnessError::Config(_) | HarnessError::Json(_) => GscStatus::InvalidArgument,
            HarnessError::Io(_) | HarnessError::Csv(_) => GscStatus::Io,
            _ => GscStatus::Computation,
        };
        Self(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GscStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GscStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            GscStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either null or a live pointer of the right type.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(GscStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: as above, for a writable location.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(GscStatus::NullPointer, format!("{what} is null")))
}

fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    // SAFETY: the caller guarantees `len` readable values at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    out_ptr(p, what)?;
    // SAFETY: the caller guarantees `len` writable values at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    // SAFETY: the caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Failure::invalid(format!("{what} is not UTF-8")))
}

fn matrix<'a>(m: *const GscMatrix, what: &str) -> Result<&'a ComplexMatrix, Failure> {
    non_null(m, what).map(|m| &m.0)
}

fn emit(out: *mut *mut GscMatrix, m: ComplexMatrix) -> Result<(), Failure> {
    *out_ptr(out, "output handle")? = Box::into_raw(Box::new(GscMatrix(m)));
    Ok(())
}

fn column(m: &ComplexMatrix, what: &str) -> Result<Vec<C64>, Failure> {
    if m.cols() != 1 {
        return Err(Failure::invalid(format!("{what} must have one column, has {}", m.cols())));
    }
    Ok(m.col_vec(0))
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating NUL.
#[no_mangle]
pub extern "C" fn gsc_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message into `buf` (at most `cap - 1` bytes plus a
/// NUL) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gsc_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            // SAFETY: `buf` holds `cap > n` bytes.
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Builds a `rows x cols` matrix from column-major real and imaginary parts.
/// `im` may be null for a real matrix.
///
/// # Safety
/// `re` (and `im` when non-null) must hold `rows * cols` values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_matrix_new(
    rows: usize,
    cols: usize,
    re: *const f64,
    im: *const f64,
    out: *mut *mut GscMatrix,
) -> GscStatus {
    guard(|| {
        let len = rows.checked_mul(cols).ok_or_else(|| Failure::invalid("matrix size overflows"))?;
        let re = slice(re, len, "re")?;
        let im = if im.is_null() { None } else { Some(slice(im, len, "im")?) };
        let data: Vec<C64> = (0..len).map(|k| C64::new(re[k], im.map_or(0.0, |v| v[k]))).collect();
        let m = ComplexMatrix::from_col_major(rows, cols, &data).map_err(|e| Failure::invalid(e.to_string()))?;
        emit(out, m)
    })
}

/// Releases a matrix handle. Null is ignored.
///
/// # Safety
/// `m` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsc_matrix_free(m: *mut GscMatrix) {
    if !m.is_null() {
        // SAFETY: `m` was produced by `Box::into_raw` here.
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Row count, or 0 for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gsc_matrix_rows(m: *const GscMatrix) -> usize {
    // SAFETY: see above.
    unsafe { m.as_ref() }.map_or(0, |m| m.0.rows())
}

/// Column count, or 0 for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gsc_matrix_cols(m: *const GscMatrix) -> usize {
    // SAFETY: see above.
    unsafe { m.as_ref() }.map_or(0, |m| m.0.cols())
}

/// Copies entries out in column-major order. `im` may be null.
///
/// # Safety
/// `re` (and `im` when non-null) must have room for `rows * cols` values.
#[no_mangle]
pub unsafe extern "C" fn gsc_matrix_read(m: *const GscMatrix, re: *mut f64, im: *mut f64) -> GscStatus {
    guard(|| {
        let m = matrix(m, "matrix")?;
        let (r, c) = (m.rows(), m.cols());
        let re = slice_mut(re, r * c, "re")?;
        let mut im = if im.is_null() { None } else { Some(slice_mut(im, r * c, "im")?) };
        for j in 0..c {
            for i in 0..r {
                let z = m.get(i, j);
                re[j * r + i] = z.re;
                if let Some(im) = im.as_deref_mut() {
                    im[j * r + i] = z.im;
                }
            }
        }
        Ok(())
    })
}

/// Containment gap of span(m) in span(n) in the Euclidean inner product.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_containment_gap(m: *const GscMatrix, n: *const GscMatrix, out: *mut f64) -> GscStatus {
    guard(|| {
        let (m, n) = (matrix(m, "m")?, matrix(n, "n")?);
        if m.rows() != n.rows() {
            return Err(Failure::invalid(format!("frames have {} and {} rows", m.rows(), n.rows())));
        }
        let gram = Gram::identity(m.rows(), "euclidean");
        let sm = orthonormalize(m, &gram).map_err(Failure::compute)?;
        let sn = orthonormalize(n, &gram).map_err(Failure::compute)?;
        *out_ptr(out, "out")? = containment_gap(&sm, &sn, &gram).map_err(Failure::compute)?;
        Ok(())
    })
}

/// Frobenius separation of `l1` and `l2`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_sep(l1: *const GscMatrix, l2: *const GscMatrix, out: *mut f64) -> GscStatus {
    guard(|| {
        *out_ptr(out, "out")? = sep_bruteforce(matrix(l1, "l1")?, matrix(l2, "l2")?).map_err(Failure::compute)?;
        Ok(())
    })
}

/// Solves `l1 S - S l2 = m`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_sylvester_solve(
    l1: *const GscMatrix,
    l2: *const GscMatrix,
    m: *const GscMatrix,
    out: *mut *mut GscMatrix,
) -> GscStatus {
    guard(|| {
        let s = sylvester_oracle(matrix(l1, "l1")?, matrix(l2, "l2")?, matrix(m, "m")?).map_err(Failure::compute)?;
        emit(out, s)
    })
}

/// Spectral projector of `l` for the eigenvalues inside the circle with the
/// given center and radius; `nodes` is the starting quadrature size.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_dunford_projector(
    l: *const GscMatrix,
    center_re: f64,
    center_im: f64,
    radius: f64,
    nodes: usize,
    out: *mut *mut GscMatrix,
) -> GscStatus {
    guard(|| {
        let l = matrix(l, "l")?;
        let contour = Contour::new(C64::new(center_re, center_im), radius, nodes)
            .map_err(|e| Failure::invalid(e.to_string()))?;
        let gram = Gram::identity(l.rows(), "euclidean");
        let p = dunford_projector(l, &contour, &gram).map_err(Failure::compute)?;
        emit(out, p.matrix)
    })
}

/// Frame spanning the range of `s` closest to `t`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_nearest_frame(
    s: *const GscMatrix,
    t: *const GscMatrix,
    out: *mut *mut GscMatrix,
) -> GscStatus {
    guard(|| {
        let f = nearest_frame(matrix(s, "s")?, matrix(t, "t")?).map_err(Failure::compute)?;
        emit(out, f)
    })
}

/// Least-squares slope and intercept of `ln value` against `ln h`. Points
/// with non-positive entries are skipped.
///
/// # Safety
/// `h` and `values` must hold `len` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_fit_rate(
    h: *const f64,
    values: *const f64,
    len: usize,
    slope: *mut f64,
    intercept: *mut f64,
) -> GscStatus {
    guard(|| {
        let fit = fit_rate("ffi", slice(h, len, "h")?, slice(values, len, "values")?);
        if !fit.valid {
            return Err(Failure::invalid(format!("{} usable points", fit.points)));
        }
        *out_ptr(slope, "slope")? = fit.slope;
        *out_ptr(intercept, "intercept")? = fit.intercept;
        Ok(())
    })
}

/// Runs up to `steps` steps of two-sided Lanczos from the column vectors
/// `v1` and `w1`, or Arnoldi from `v1` when `w1` is null.
///
/// # Safety
/// Non-null handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_krylov_run(
    a: *const GscMatrix,
    v1: *const GscMatrix,
    w1: *const GscMatrix,
    steps: usize,
    out: *mut *mut GscKrylovRun,
) -> GscStatus {
    guard(|| {
        let a = matrix(a, "a")?;
        let v = column(matrix(v1, "v1")?, "v1")?;
        let run = if w1.is_null() {
            arnoldi(a, &v, steps)
        } else {
            bilanczos(a, &v, &column(matrix(w1, "w1")?, "w1")?, steps)
        }
        .map_err(Failure::compute)?;
        *out_ptr(out, "output handle")? = Box::into_raw(Box::new(GscKrylovRun(run)));
        Ok(())
    })
}

/// Releases a run handle. Null is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsc_krylov_run_free(run: *mut GscKrylovRun) {
    if !run.is_null() {
        // SAFETY: `run` was produced by `Box::into_raw` here.
        drop(unsafe { Box::from_raw(run) });
    }
}

/// Completed steps, or 0 for null.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gsc_krylov_run_steps(run: *const GscKrylovRun) -> usize {
    // SAFETY: see above.
    unsafe { run.as_ref() }.map_or(0, |r| r.0.len())
}

/// Leading `l x l` block of the projected matrix.
///
/// # Safety
/// `run` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_krylov_run_projected(
    run: *const GscKrylovRun,
    l: usize,
    out: *mut *mut GscMatrix,
) -> GscStatus {
    guard(|| {
        let run = non_null(run, "run")?;
        let h = run.0.projected(l).map_err(|e| Failure::invalid(e.to_string()))?;
        emit(out, h)
    })
}

/// Runs a study from a JSON configuration and writes `records.csv` and
/// `summary.json` into `out_dir`. `passed` receives whether every asserted
/// check held.
///
/// # Safety
/// Strings must be NUL-terminated; `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsc_run_study(config_json: *const c_char, out_dir: *const c_char, passed: *mut bool) -> GscStatus {
    guard(|| {
        let cfg = StudyConfig::from_json(c_str(config_json, "config_json")?)?;
        let dir = c_str(out_dir, "out_dir")?;
        let out = run_study(&cfg)?;
        out.write(Path::new(dir), OutputFormat::Csv)?;
        *out_ptr(passed, "passed")? = out.summary.passed;
        Ok(())
    })
}
