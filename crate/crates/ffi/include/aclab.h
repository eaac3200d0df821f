#ifndef ACLAB_H
#define ACLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define ACLAB_OK 0

#define ACLAB_ERR_NULL -1

#define ACLAB_ERR_INVALID_ARGUMENT -2

#define ACLAB_ERR_CONFIG -3

#define ACLAB_ERR_NUMERICAL -4

#define ACLAB_ERR_IO -5

#define ACLAB_ERR_PANIC -99

#define ACLAB_WELL_QUARTIC 0

#define ACLAB_WELL_ASYMMETRIC 1

// Tabulated heteroclinic profile.
typedef struct AclabProfile AclabProfile;

// Converged solver state.
typedef struct AclabState AclabState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *aclab_version(void);

// Message of the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *aclab_last_error_message(void);

// Tabulate the profile of a built-in well on `n_points` nodes of
// `[-t_max, t_max]`; `t_max <= 0` picks the default window.
//
// # Safety
// `out` must be valid for writing one pointer.
int32_t aclab_profile_new(int32_t well,
                          uintptr_t n_points,
                          double t_max,
                          struct AclabProfile **out);

// `u*(t)` and `w*(t) = u*'(t)`.
//
// # Safety
// `p` must come from `aclab_profile_new`; the out-pointers must be valid.
int32_t aclab_profile_eval(const struct AclabProfile *p, double t, double *out_u, double *out_w);

// Surface tension `c* = int w*^2`.
//
// # Safety
// `p` must come from `aclab_profile_new`; `out` must be valid.
int32_t aclab_profile_c_star(const struct AclabProfile *p, double *out);

// # Safety
// `p` must be null or come from `aclab_profile_new`, and not be used afterwards.
void aclab_profile_free(struct AclabProfile *p);

// Lowest `k` Dirichlet eigenvalues of the eps-scaled operator on `[-1, 1]`,
// written to `out[0..k]`.
//
// # Safety
// `p` must come from `aclab_profile_new`; `out` must hold `k` doubles.
int32_t aclab_eps_spectrum(const struct AclabProfile *p, double eps, uintptr_t k, double *out);

// Solve the case described by a TOML file at one `eps` with the method the
// file declares.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid.
int32_t aclab_solve_config(const char *path, double eps, struct AclabState **out);

// Number of grid values in the state.
//
// # Safety
// `s` must come from `aclab_solve_config`; `out` must be valid.
int32_t aclab_state_len(const struct AclabState *s, uintptr_t *out);

// Copy the field into `buf`, which must hold exactly `len` values.
//
// # Safety
// `s` must come from `aclab_solve_config`; `buf` must hold `len` doubles.
int32_t aclab_state_u(const struct AclabState *s, double *buf, uintptr_t len);

// Multiplier, eps, scaled residual and constraint gap of the state.
//
// # Safety
// `s` must come from `aclab_solve_config`; each out-pointer must be valid.
int32_t aclab_state_scalars(const struct AclabState *s,
                            double *out_lambda,
                            double *out_eps,
                            double *out_residual,
                            double *out_gap);

// # Safety
// `s` must be null or come from `aclab_solve_config`, and not be used afterwards.
void aclab_state_free(struct AclabState *s);

// Run the full pipeline of a case file, writing artifacts into `out_dir`.
// `out_passed` receives 1 if every declared assertion holds, else 0.
//
// # Safety
// `path` and `out_dir` must be NUL-terminated strings; `out_passed` must be valid.
int32_t aclab_run_config(const char *path, const char *out_dir, uint64_t seed, int32_t *out_passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACLAB_H */
