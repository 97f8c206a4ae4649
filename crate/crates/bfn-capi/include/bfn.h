#ifndef BFN_CAPI_H
#define BFN_CAPI_H

/* This header is generated by cbindgen from crates/bfn-capi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every C-ABI entry point.
 */
typedef enum {
  BFN_STATUS_OK = 0,
  BFN_STATUS_NULL_POINTER = 1,
  BFN_STATUS_INVALID_ARGUMENT = 2,
  BFN_STATUS_STEP_FAILURE = 3,
  BFN_STATUS_NON_IDENTIFIABLE = 4,
  BFN_STATUS_INSTABILITY = 5,
  BFN_STATUS_IO = 6,
  BFN_STATUS_UNKNOWN = 7,
} BfnStatus;

/**
 * Opaque linear plant handle.
 */
typedef struct BfnLti BfnLti;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *bfn_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *bfn_version(void);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be a pointer previously returned by a `bfn_*` function that
 * documents this deallocator, and must not be used afterwards.
 */
void bfn_string_free(char *s);

/**
 * Builds a linear plant `dz/dt = A z + B theta`, `y = C z` with optional
 * SPD state/output Gram matrices (`NULL` selects the identity). Row-major
 * buffers: `a` is `n x n`, `b` is `n x p`, `c` is `m x n`, `g_x` is
 * `n x n`, `g_y` is `m x m`. With `require_skew` nonzero, construction
 * fails unless `A` is skew-adjoint in the state Gram.
 *
 * # Safety
 * All non-NULL pointers must reference buffers of the documented sizes;
 * `out` must be a valid location to store the handle.
 */
BfnStatus bfn_lti_new(uintptr_t n,
                      uintptr_t m,
                      uintptr_t p,
                      const double *a,
                      const double *b,
                      const double *c,
                      const double *g_x,
                      const double *g_y,
                      bool require_skew,
                      BfnLti **out);

/**
 * Releases a plant handle.
 *
 * # Safety
 * `sys` must come from [`bfn_lti_new`] and must not be used afterwards.
 */
void bfn_lti_free(BfnLti *sys);

/**
 * Simulates the plant from `z0` with parameter `theta` on a uniform grid
 * and writes the noise-free outputs, row-major `(n_steps + 1) x m`.
 *
 * # Safety
 * `sys` must be a live handle; `z0` has length `n`, `theta` length `p`,
 * `y_out` room for `(n_steps + 1) * m` doubles.
 */
BfnStatus bfn_lti_simulate(const BfnLti *sys,
                           double t_final,
                           uintptr_t n_steps,
                           const double *z0,
                           const double *theta,
                           double *y_out);

/**
 * Solves the regularized output-error problem exactly (stacked least
 * squares): minimizes
 * `u0_scale |xi - theta0|^2 + int |y - C z[zeta, xi]|^2` over the initial
 * state and parameter, with observer gain `kappa`. Writes the minimizer
 * into `zeta_out` (length `n`) and `theta_out` (length `p`).
 *
 * # Safety
 * Buffer contracts as in [`bfn_lti_simulate`]; `y` is row-major
 * `(n_steps + 1) x m`.
 */
BfnStatus bfn_oracle_minimize(const BfnLti *sys,
                              double t_final,
                              uintptr_t n_steps,
                              const double *y,
                              double kappa,
                              const double *theta0,
                              double u0_scale,
                              double *zeta_out,
                              double *theta_out);

/**
 * Runs the joint BFN + Gauss-Newton iteration with constant gain `kappa`
 * from a zero initial guess, stopping at `tol` (combined step norm) or
 * `max_iters`. Writes the final estimates and, when `iters_out` is
 * non-NULL, the number of sweeps executed.
 *
 * # Safety
 * Buffer contracts as in [`bfn_oracle_minimize`].
 */
BfnStatus bfn_linear_estimate(const BfnLti *sys,
                              double t_final,
                              uintptr_t n_steps,
                              const double *y,
                              double kappa,
                              const double *theta0,
                              double u0_scale,
                              uintptr_t max_iters,
                              double tol,
                              double *zeta_out,
                              double *theta_out,
                              uintptr_t *iters_out);

/**
 * Oscillator source-estimation sweep: for each gain, the Euclidean distance
 * between the minimizing source coefficients and the truth is written into
 * `err_out` (length `n_gains`).
 *
 * # Safety
 * `gains` and `err_out` must reference `n_gains` doubles.
 */
BfnStatus bfn_oscillator_sweep(uint64_t seed,
                               const double *gains,
                               uintptr_t n_gains,
                               bool with_noise,
                               double *err_out);

/**
 * Wave-equation inverse potential run. Writes one `(param, displacement,
 * velocity)` error triple per sweep, row-major `n_iters x 3`.
 *
 * # Safety
 * `errors_out` must reference `3 * n_iters` doubles.
 */
BfnStatus bfn_wave_run(uint64_t seed,
                       uintptr_t n_iters,
                       double kappa,
                       uintptr_t mesh_elems,
                       double t_final,
                       double dt,
                       double noise_scale,
                       double *errors_out);

/**
 * Runs the verification suites (all of them, or the one named by `only`)
 * and stores `1` into `passed_out` when everything held. When `json_out`
 * is non-NULL it receives the full JSON report; release it with
 * [`bfn_string_free`].
 *
 * # Safety
 * `only` must be NULL or a NUL-terminated string; out-pointers must be
 * valid when non-NULL.
 */
BfnStatus bfn_verify(uint64_t seed, const char *only, bool *passed_out, char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BFN_CAPI_H */
