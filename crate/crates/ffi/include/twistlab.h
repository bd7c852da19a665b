#ifndef TWISTLAB_H
#define TWISTLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Region families for [`tl_region_measure`] and [`tl_metric_run_json`].
typedef enum TlFamily {
  TL_FAMILY_INTERVAL = 0,
  TL_FAMILY_SUP_NORM = 1,
  TL_FAMILY_MULTIPLICATIVE = 2,
} TlFamily;

// Status codes.
typedef enum TlStatus {
  TL_STATUS_OK = 0,
  TL_STATUS_NULL_POINTER = 1,
  TL_STATUS_INVALID_UTF8 = 2,
  TL_STATUS_PARSE = 3,
  TL_STATUS_INVALID_PARAMETER = 4,
  TL_STATUS_PRECISION = 5,
  TL_STATUS_OUT_OF_DOMAIN = 6,
  TL_STATUS_BUDGET = 7,
  TL_STATUS_INVARIANT = 8,
  TL_STATUS_BADNESS_VIOLATION = 9,
  TL_STATUS_INDEX_OUT_OF_RANGE = 10,
  TL_STATUS_PANIC = 11,
  TL_STATUS_OTHER = 12,
} TlStatus;

// A Cantor tree together with its box-dimension estimate.
typedef struct TlCantorTree TlCantorTree;

// A finished weighted badness profile.
typedef struct TlProfile TlProfile;

// A real number source (rational, quadratic surd, continued fraction, ...).
typedef struct TlRealSource TlRealSource;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread (empty after a success).
// Valid until the next call into the library on the same thread.
const char *tl_last_error(void);

// Library version, a static string.
const char *tl_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void tl_string_free(char *s);

// Parses a real source such as `quad:(0+1*sqrt(2))/1` or `rational:3/7`.
//
// # Safety
// `spec` must be a NUL-terminated string; `out` must be writable.
enum TlStatus tl_real_source_parse(const char *spec, struct TlRealSource **out_src);

// # Safety
// `src` must come from [`tl_real_source_parse`] or be null.
void tl_real_source_free(struct TlRealSource *src);

// Canonical serialization of a source (free with [`tl_string_free`]).
//
// # Safety
// Pointers must be valid.
enum TlStatus tl_real_source_to_string(const struct TlRealSource *src, char **out_str);

// `{q x}` to `bits` bits: value and certified absolute error.
//
// # Safety
// Pointers must be valid.
enum TlStatus tl_real_source_frac_mult(const struct TlRealSource *src,
                                       int64_t q,
                                       uint32_t bits,
                                       double *out_value,
                                       double *out_error);

// `||q x||` to `bits` bits: value and certified absolute error.
//
// # Safety
// Pointers must be valid.
enum TlStatus tl_real_source_dist(const struct TlRealSource *src,
                                  int64_t q,
                                  uint32_t bits,
                                  double *out_value,
                                  double *out_error);

// Weighted badness profile of the pair `x_spec` (two sources, comma-separated).
//
// # Safety
// `x_spec` must be a NUL-terminated string; `out` must be writable.
enum TlStatus tl_profile_run(const char *x_spec,
                             double i,
                             double j,
                             uint64_t limit,
                             struct TlProfile **out_profile);

// # Safety
// `p` must come from [`tl_profile_run`] or be null.
void tl_profile_free(struct TlProfile *p);

// Estimated badness constant, its error bound and the minimizing `q`.
//
// # Safety
// Pointers must be valid.
enum TlStatus tl_profile_constant(const struct TlProfile *p,
                                  double *out_c,
                                  double *out_error,
                                  uint64_t *out_argmin);

// Number of record minima.
//
// # Safety
// Pointers must be valid.
enum TlStatus tl_profile_record_count(const struct TlProfile *p, uintptr_t *out_count);

// Record `index` as `(q, value)`.
//
// # Safety
// Pointers must be valid.
enum TlStatus tl_profile_record(const struct TlProfile *p,
                                uintptr_t index,
                                uint64_t *out_q,
                                double *out_value);

// Area of a union of torus rectangles given as `n` rows
// `(center_x, center_y, half_width_x, half_width_y)`.
//
// # Safety
// `rects` must point to `4 n` doubles (may be null when `n == 0`).
enum TlStatus tl_union_measure(const double *rects,
                               uintptr_t n,
                               double *out_value,
                               double *out_error);

// Closed-form measure of a region with parameter `t`
// (`i`, `j` are read only for the sup-norm family).
//
// # Safety
// `out_value` must be writable.
enum TlStatus tl_region_measure(enum TlFamily f, double i, double j, double t, double *out_value);

// Monte-Carlo run; the report JSON is returned through `out_json`
// (free with [`tl_string_free`]).
//
// # Safety
// `psi_spec` must be a NUL-terminated string; `out_json` must be writable.
enum TlStatus tl_metric_run_json(enum TlFamily f,
                                 double i,
                                 double j,
                                 const char *psi_spec,
                                 uint64_t n,
                                 uint64_t q,
                                 uint64_t seed,
                                 char **out_json);

// Builds a Cantor tree for the pair `x_spec` with badness constant `c`.
//
// # Safety
// `x_spec` must be a NUL-terminated string; `out_tree` must be writable.
enum TlStatus tl_cantor_build(const char *x_spec,
                              double i,
                              double j,
                              uint64_t k,
                              uintptr_t depth,
                              double c,
                              struct TlCantorTree **out_tree);

// # Safety
// `t` must come from [`tl_cantor_build`] or be null.
void tl_cantor_free(struct TlCantorTree *t);

// Number of surviving nodes at `level` (0 is the root).
//
// # Safety
// Pointers must be valid.
enum TlStatus tl_cantor_level_size(const struct TlCantorTree *t,
                                   uintptr_t level,
                                   uintptr_t *out_count);

// Box-dimension slope and the analytic floor.
//
// # Safety
// Pointers must be valid.
enum TlStatus tl_cantor_dimension(const struct TlCantorTree *t,
                                  double *out_slope,
                                  double *out_floor);

// Theta and the number of pruned children.
//
// # Safety
// Pointers must be valid.
enum TlStatus tl_cantor_info(const struct TlCantorTree *t,
                             double *out_theta,
                             uintptr_t *out_pruned);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWISTLAB_H */
