/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef LINCOMB_H
#define LINCOMB_H

#include <stdbool.h>
#include <stddef.h>

// Status codes returned by every fallible function.
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_INVALID_INPUT = 1,
  LC_STATUS_DIMENSION_MISMATCH = 2,
  LC_STATUS_NON_FINITE = 3,
  LC_STATUS_INFEASIBLE = 4,
  LC_STATUS_UNBOUNDED = 5,
  LC_STATUS_DEGENERATE = 6,
  LC_STATUS_SOLVER_ERROR = 7,
  LC_STATUS_NULL_POINTER = 8,
  LC_STATUS_PANIC = 9,
} LcStatus;

// Result of an alignment solve, with the gradient w.r.t. the match costs.
typedef struct LcAlignment LcAlignment;

// Result of an LP solve.
typedef struct LcLp LcLp;

// Result of an assignment solve.
typedef struct LcMatching LcMatching;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *lc_version(void);

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *lc_last_error_message(void);

// Solves the `n x n` assignment problem for `cost`.
//
// # Safety
// `cost` must point to `n * n` doubles and `out` to a writable handle slot.
enum LcStatus lc_assignment_solve(const double *cost, size_t n, struct LcMatching **out);

// # Safety
// `h` must be a live handle from [`lc_assignment_solve`].
double lc_matching_z_star(const struct LcMatching *h);

// # Safety
// `h` must be a live handle from [`lc_assignment_solve`].
bool lc_matching_unique(const struct LcMatching *h);

// Writes `perm` (`len` must equal `n`).
//
// # Safety
// `h` must be a live handle and `perm` must have room for `len` values.
enum LcStatus lc_matching_perm(const struct LcMatching *h, size_t *perm, size_t len);

// Writes the row and column duals (`len` must equal `n` for each).
//
// # Safety
// `h` must be a live handle; `u` and `v` must each have room for `len` values.
enum LcStatus lc_matching_duals(const struct LcMatching *h, double *u, double *v, size_t len);

// # Safety
// `h` must be null or a handle from [`lc_assignment_solve`] not yet freed.
void lc_matching_free(struct LcMatching *h);

// Minimum-cost alignment over a `tp x tt` match-cost grid with gap scale `gamma > 1`.
//
// # Safety
// `match_costs` must point to `tp * tt` doubles and `out` to a writable handle slot.
enum LcStatus lc_gsa_solve(const double *match_costs,
                           size_t tp,
                           size_t tt,
                           double gamma,
                           struct LcAlignment **out);

// # Safety
// `h` must be a live handle from [`lc_gsa_solve`].
double lc_alignment_z_star(const struct LcAlignment *h);

// # Safety
// `h` must be a live handle from [`lc_gsa_solve`].
bool lc_alignment_unique(const struct LcAlignment *h);

// Writes the `tp x tt` gradient of `z*` w.r.t. the match costs.
//
// # Safety
// `h` must be a live handle; `grad` must have room for `len` values.
enum LcStatus lc_alignment_gradient(const struct LcAlignment *h, double *grad, size_t len);

// # Safety
// `h` must be null or a handle from [`lc_gsa_solve`] not yet freed.
void lc_alignment_free(struct LcAlignment *h);

// Solves `min c.u  s.t.  A u = b, u >= 0` with `A` of shape `m x p`.
//
// # Safety
// `c` must hold `p`, `a` `m * p` and `b` `m` doubles; `out` must be writable.
enum LcStatus lc_lp_solve(const double *c,
                          size_t p,
                          const double *a,
                          size_t m,
                          const double *b,
                          struct LcLp **out);

// # Safety
// `h` must be a live handle from [`lc_lp_solve`].
double lc_lp_z_star(const struct LcLp *h);

// # Safety
// `h` must be a live handle from [`lc_lp_solve`].
bool lc_lp_unique(const struct LcLp *h);

// Writes the primal solution `u*` (gradient w.r.t. `c`).
//
// # Safety
// `h` must be a live handle; `u` must have room for `len` values.
enum LcStatus lc_lp_primal(const struct LcLp *h, double *u, size_t len);

// Writes the dual solution `v*` (gradient w.r.t. `b`).
//
// # Safety
// `h` must be a live handle; `v` must have room for `len` values.
enum LcStatus lc_lp_dual(const struct LcLp *h, double *v, size_t len);

// # Safety
// `h` must be null or a handle from [`lc_lp_solve`] not yet freed.
void lc_lp_free(struct LcLp *h);

// Bag matching loss for `b x d` log-probabilities and `b` labels; writes the
// loss and its `b x d` gradient.
//
// # Safety
// `logp` must hold `b * d` doubles, `labels` `b` values, `grad` room for `b * d`.
enum LcStatus lc_matching_loss(const double *logp,
                               size_t b,
                               size_t d,
                               const size_t *labels,
                               double *loss,
                               double *grad);

// Alignment loss for `tp x d` log-probabilities against `tt` target tokens;
// writes the loss and its `tp x d` gradient.
//
// # Safety
// `logp` must hold `tp * d` doubles, `targets` `tt` values, `grad` room for `tp * d`.
enum LcStatus lc_gsa_loss(const double *logp,
                          size_t tp,
                          size_t d,
                          const size_t *targets,
                          size_t tt,
                          double gamma,
                          double *loss,
                          double *grad);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINCOMB_H */
