#ifndef GALERKIN_SC_H
#define GALERKIN_SC_H

#include <stdbool.h>
#include <stddef.h>

// Result of every fallible call.
typedef enum GscStatus {
  GSC_STATUS_OK = 0,
  GSC_STATUS_NULL_POINTER = 1,
  GSC_STATUS_INVALID_ARGUMENT = 2,
  GSC_STATUS_COMPUTATION = 3,
  GSC_STATUS_IO = 4,
  GSC_STATUS_PANIC = 5,
} GscStatus;

// Completed Arnoldi or two-sided Lanczos recursion.
typedef struct GscKrylovRun GscKrylovRun;

// Dense complex matrix.
typedef struct GscMatrix GscMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Length in bytes of the last error message on this thread, excluding the
// terminating NUL.
size_t gsc_last_error_length(void);

// Copies the last error message into `buf` (at most `cap - 1` bytes plus a
// NUL) and returns the full message length.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t gsc_last_error_message(char *buf, size_t cap);

// Builds a `rows x cols` matrix from column-major real and imaginary parts.
// `im` may be null for a real matrix.
//
// # Safety
// `re` (and `im` when non-null) must hold `rows * cols` values; `out` must be
// writable.
enum GscStatus gsc_matrix_new(size_t rows,
                              size_t cols,
                              const double *re,
                              const double *im,
                              struct GscMatrix **out);

// Releases a matrix handle. Null is ignored.
//
// # Safety
// `m` must come from this library and not be used afterwards.
void gsc_matrix_free(struct GscMatrix *m);

// Row count, or 0 for null.
//
// # Safety
// `m` must be null or a live handle.
size_t gsc_matrix_rows(const struct GscMatrix *m);

// Column count, or 0 for null.
//
// # Safety
// `m` must be null or a live handle.
size_t gsc_matrix_cols(const struct GscMatrix *m);

// Copies entries out in column-major order. `im` may be null.
//
// # Safety
// `re` (and `im` when non-null) must have room for `rows * cols` values.
enum GscStatus gsc_matrix_read(const struct GscMatrix *m, double *re, double *im);

// Containment gap of span(m) in span(n) in the Euclidean inner product.
//
// # Safety
// Handles must be live; `out` must be writable.
enum GscStatus gsc_containment_gap(const struct GscMatrix *m,
                                   const struct GscMatrix *n,
                                   double *out);

// Frobenius separation of `l1` and `l2`.
//
// # Safety
// Handles must be live; `out` must be writable.
enum GscStatus gsc_sep(const struct GscMatrix *l1, const struct GscMatrix *l2, double *out);

// Solves `l1 S - S l2 = m`.
//
// # Safety
// Handles must be live; `out` must be writable.
enum GscStatus gsc_sylvester_solve(const struct GscMatrix *l1,
                                   const struct GscMatrix *l2,
                                   const struct GscMatrix *m,
                                   struct GscMatrix **out);

// Spectral projector of `l` for the eigenvalues inside the circle with the
// given center and radius; `nodes` is the starting quadrature size.
//
// # Safety
// Handles must be live; `out` must be writable.
enum GscStatus gsc_dunford_projector(const struct GscMatrix *l,
                                     double center_re,
                                     double center_im,
                                     double radius,
                                     size_t nodes,
                                     struct GscMatrix **out);

// Frame spanning the range of `s` closest to `t`.
//
// # Safety
// Handles must be live; `out` must be writable.
enum GscStatus gsc_nearest_frame(const struct GscMatrix *s,
                                 const struct GscMatrix *t,
                                 struct GscMatrix **out);

// Least-squares slope and intercept of `ln value` against `ln h`. Points
// with non-positive entries are skipped.
//
// # Safety
// `h` and `values` must hold `len` values; outputs must be writable.
enum GscStatus gsc_fit_rate(const double *h,
                            const double *values,
                            size_t len,
                            double *slope,
                            double *intercept);

// Runs up to `steps` steps of two-sided Lanczos from the column vectors
// `v1` and `w1`, or Arnoldi from `v1` when `w1` is null.
//
// # Safety
// Non-null handles must be live; `out` must be writable.
enum GscStatus gsc_krylov_run(const struct GscMatrix *a,
                              const struct GscMatrix *v1,
                              const struct GscMatrix *w1,
                              size_t steps,
                              struct GscKrylovRun **out);

// Releases a run handle. Null is ignored.
//
// # Safety
// `run` must come from this library and not be used afterwards.
void gsc_krylov_run_free(struct GscKrylovRun *run);

// Completed steps, or 0 for null.
//
// # Safety
// `run` must be null or a live handle.
size_t gsc_krylov_run_steps(const struct GscKrylovRun *run);

// Leading `l x l` block of the projected matrix.
//
// # Safety
// `run` must be live; `out` must be writable.
enum GscStatus gsc_krylov_run_projected(const struct GscKrylovRun *run,
                                        size_t l,
                                        struct GscMatrix **out);

// Runs a study from a JSON configuration and writes `records.csv` and
// `summary.json` into `out_dir`. `passed` receives whether every asserted
// check held.
//
// # Safety
// Strings must be NUL-terminated; `passed` must be writable.
enum GscStatus gsc_run_study(const char *config_json, const char *out_dir, bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GALERKIN_SC_H */
