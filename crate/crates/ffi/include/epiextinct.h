#ifndef EPIEXTINCT_H
#define EPIEXTINCT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum EpxStatus {
  EPX_OK = 0,
  EPX_NULL_POINTER = 1,
  EPX_INVALID_ARGUMENT = 2,
  EPX_BUFFER_TOO_SMALL = 3,
  EPX_NO_ENDEMIC_EQUILIBRIUM = 4,
  EPX_INFEASIBLE = 5,
  EPX_NOT_CONVERGED = 6,
  EPX_ALL_CENSORED = 7,
  EPX_NUMERICAL = 8,
  EPX_PANIC = 9,
} EpxStatus;

typedef enum EpxModelKind {
  EPX_SIS = 0,
  EPX_SIRS = 1,
  EPX_SIR_DEMOGRAPHY = 2,
} EpxModelKind;

// Opaque model handle.
typedef struct EpxModel EpxModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *epx_last_error(void);

// Creates a model. `rho` is read for SIRS only and `mu` for SIR with
// demography only.
//
// # Safety
// `out` must be a valid pointer; on success it receives a handle to be
// released with [`epx_model_free`].
enum EpxStatus epx_model_new(enum EpxModelKind kind,
                             double lambda,
                             double gamma,
                             double rho,
                             double mu,
                             struct EpxModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`epx_model_new`] and not be used afterwards.
void epx_model_free(struct EpxModel *model);

// State dimension (1 for SIS, 2 otherwise), or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t epx_model_dim(const struct EpxModel *model);

// Writes the drift `b(z)` into `out`.
//
// # Safety
// `z` must point to `dim` values and `out` to `out_len` writable values.
enum EpxStatus epx_model_drift(const struct EpxModel *model,
                               const double *z,
                               double *out,
                               size_t out_len);

// Writes the endemic equilibrium `z*` into `out`.
//
// # Safety
// `out` must point to `out_len` writable values.
enum EpxStatus epx_model_equilibrium(const struct EpxModel *model, double *out, size_t out_len);

// Large-deviations cost of extinction from the endemic equilibrium.
// Returns `EPX_NOT_CONVERGED` with `*value` still set when the numerical
// minimization did not settle.
//
// # Safety
// `value` must be a valid pointer.
enum EpxStatus epx_quasipotential_ld(const struct EpxModel *model, double *value);

// Moderate-deviations cost of raising the infective fraction by `a`.
//
// # Safety
// `value` must be a valid pointer.
enum EpxStatus epx_quasipotential_md(const struct EpxModel *model, double a, double *value);

// Monte Carlo extinction times from the endemic equilibrium.
//
// `times` receives one time per replicate (the horizon for censored ones)
// and `censored`, if not null, the matching flags. `mean` receives the mean
// over uncensored replicates. Results depend only on `seed`, not `workers`
// (0 = all cores).
//
// # Safety
// `times` must hold `reps` values, `censored` must be null or hold `reps`
// values, and `mean` must be null or valid.
enum EpxStatus epx_mc_extinction(const struct EpxModel *model,
                                 uint64_t pop_size,
                                 size_t reps,
                                 double t_max,
                                 uint64_t seed,
                                 size_t workers,
                                 double *times,
                                 bool *censored,
                                 double *mean);

// Critical population size for reproduction number `r0` and ratio
// `epsilon`; `simplified` drops the `(1 - 1/r0)^2` factor.
//
// # Safety
// `value` must be a valid pointer.
enum EpxStatus epx_critical_size(double r0, double epsilon, bool simplified, double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPIEXTINCT_H */
