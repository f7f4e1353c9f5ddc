#ifndef YBMAP_H
#define YBMAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum YbStatus {
  YB_STATUS_OK = 0,
  YB_STATUS_NULL_POINTER = 1,
  YB_STATUS_INVALID_PARAMS = 2,
  YB_STATUS_DIMENSION = 3,
  YB_STATUS_DOMAIN = 4,
  YB_STATUS_NUMERICAL = 5,
  YB_STATUS_BUFFER_TOO_SMALL = 6,
  YB_STATUS_PANIC = 7,
} YbStatus;

typedef struct YbModel YbModel;

typedef struct YbState YbState;

/**
 * Model parameters. `survival_two_p_plus_one` selects `S(h) = 1 - h/(2p+1)`
 * when nonzero and `1 - h/(2p)` otherwise.
 */
typedef struct YbParams {
  double maturation_age;
  size_t steps_per_year;
  double fecundity_cap;
  double decay_exponent;
  double winter_fraction;
  double season_slack;
  int32_t survival_two_p_plus_one;
} YbParams;

typedef struct YbBounds {
  double n_max;
  double c0;
  double permanence_floor;
  double lipschitz_bound;
} YbBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated description of a status code.
 */
const char *yb_status_message(enum YbStatus status);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum YbStatus yb_params_default(struct YbParams *out);

/**
 * # Safety
 * `params` must point to a valid `YbParams`; `out` must be valid for writes.
 */
enum YbStatus yb_model_new(const struct YbParams *params, struct YbModel **out);

/**
 * # Safety
 * `model` must come from [`yb_model_new`] and not be used afterwards.
 */
void yb_model_free(struct YbModel *model);

/**
 * State dimension `2p + 1`, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t yb_model_dim(const struct YbModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be valid for writes.
 */
enum YbStatus yb_model_bounds(const struct YbModel *model, struct YbBounds *out);

/**
 * Copies `len` values into a new state.
 *
 * # Safety
 * `values` must be valid for `len` reads; `out` must be valid for writes.
 */
enum YbStatus yb_state_new(const double *values, size_t len, struct YbState **out);

/**
 * The bundled period-2 point of the default model.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum YbStatus yb_state_reference(struct YbState **out);

/**
 * # Safety
 * `state` must come from this library and not be used afterwards.
 */
void yb_state_free(struct YbState *state);

/**
 * # Safety
 * `state` must be null or a live handle.
 */
size_t yb_state_len(const struct YbState *state);

/**
 * # Safety
 * `state` must be a live handle; `buf` must be valid for `cap` writes.
 */
enum YbStatus yb_state_read(const struct YbState *state, double *buf, size_t cap);

/**
 * Applies the two-year map `n` times, returning a new state.
 *
 * # Safety
 * `model` and `state` must be live handles; `out` must be valid for writes.
 */
enum YbStatus yb_advance_two_n(const struct YbModel *model,
                               const struct YbState *state,
                               size_t n,
                               struct YbState **out);

/**
 * Newton iteration for a period-2 point. `converged` receives 1 when the
 * sup residual reached `tol`.
 *
 * # Safety
 * `model` and `guess` must be live handles; the out-pointers must be
 * valid for writes.
 */
enum YbStatus yb_newton_polish(const struct YbModel *model,
                               const struct YbState *guess,
                               double tol,
                               size_t max_iter,
                               struct YbState **out,
                               double *sup_residual,
                               int32_t *converged);

/**
 * Entropy estimate from a mean escape time over `count` samples.
 *
 * # Safety
 * `k_hat` and `sigma` must be valid for writes.
 */
enum YbStatus yb_entropy_estimate(double mean_escape,
                                  size_t count,
                                  double d,
                                  double tau_s,
                                  double *k_hat,
                                  double *sigma);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* YBMAP_H */
