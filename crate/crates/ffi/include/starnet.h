#ifndef STARNET_H
#define STARNET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StarnetStatus {
  STARNET_STATUS_OK = 0,
  STARNET_STATUS_NULL_POINTER = 1,
  STARNET_STATUS_INVALID_ARGUMENT = 2,
  STARNET_STATUS_MODEL = 3,
  STARNET_STATUS_SIMULATION = 4,
  STARNET_STATUS_THEORY = 5,
  STARNET_STATUS_ORACLE = 6,
  STARNET_STATUS_PANIC = 7,
} StarnetStatus;

// Network parameters.
typedef struct StarnetParams StarnetParams;

// A simulated path sampled at the requested times.
typedef struct StarnetTrajectory StarnetTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failing call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *starnet_last_error(void);

// Static version string including the RNG algorithm identifier.
const char *starnet_version(void);

// Frees a string returned by this library. NULL is a no-op.
//
// # Safety
// `s` must come from this library and not have been freed.
void starnet_string_free(char *s);

// Validates and stores `J + 1` arrival and service rates.
//
// # Safety
// `lambda` and `mu` must point to `j + 1` doubles; `out` must be writable.
enum StarnetStatus starnet_params_new(uintptr_t j,
                                      const double *lambda,
                                      const double *mu,
                                      struct StarnetParams **out);

// # Safety
// `params` must be NULL or a live handle from [`starnet_params_new`].
void starnet_params_free(struct StarnetParams *params);

// Regime report as a JSON string; free it with [`starnet_string_free`].
//
// # Safety
// `params` must be a live handle and `out` writable.
enum StarnetStatus starnet_regime_json(const struct StarnetParams *params, char **out);

// Writes 1 when `rho_0 + max rho_j < 1`, else 0.
//
// # Safety
// `params` must be a live handle and `out` writable.
enum StarnetStatus starnet_stability(const struct StarnetParams *params, int32_t *out);

// Simulates from `init` (`nodes` counts) up to `horizon`, sampling at the
// increasing `sample_times`. `max_events == 0` selects the default budget.
//
// # Safety
// Pointers must be valid for the given lengths; `out` must be writable.
enum StarnetStatus starnet_simulate(const struct StarnetParams *params,
                                    const uint64_t *init,
                                    uintptr_t nodes,
                                    uint64_t seed,
                                    uint64_t stream,
                                    double horizon,
                                    const double *sample_times,
                                    uintptr_t n_samples,
                                    uint64_t max_events,
                                    struct StarnetTrajectory **out);

// # Safety
// `traj` must be NULL or a live handle from [`starnet_simulate`].
void starnet_trajectory_free(struct StarnetTrajectory *traj);

// Number of recorded samples; 0 for NULL.
//
// # Safety
// `traj` must be NULL or a live handle.
uintptr_t starnet_trajectory_len(const struct StarnetTrajectory *traj);

// Events simulated; 0 for NULL.
//
// # Safety
// `traj` must be NULL or a live handle.
uint64_t starnet_trajectory_events(const struct StarnetTrajectory *traj);

// 1 when the event budget ran out before the horizon.
//
// # Safety
// `traj` must be NULL or a live handle.
int32_t starnet_trajectory_truncated(const struct StarnetTrajectory *traj);

// Copies sample `index` into `time` and `counts` (`nodes` entries, which
// must equal `J + 1`).
//
// # Safety
// `traj` must be a live handle, `time` writable and `counts` valid for
// `nodes` writes.
enum StarnetStatus starnet_trajectory_sample(const struct StarnetTrajectory *traj,
                                             uintptr_t index,
                                             double *time,
                                             uint64_t *counts,
                                             uintptr_t nodes);

// `(lambda/mu)^x`.
//
// # Safety
// `out` must be writable.
enum StarnetStatus starnet_kingman_bound(double lambda, double mu, uint32_t x, double *out);

// `min(1, (lambda T + 1)(lambda/mu)^x)`.
//
// # Safety
// `out` must be writable.
enum StarnetStatus starnet_reflected_sup_bound(double lambda,
                                               double mu,
                                               double horizon,
                                               uint32_t x,
                                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STARNET_H */
