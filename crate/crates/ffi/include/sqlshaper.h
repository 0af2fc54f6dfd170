#ifndef SQLSHAPER_H
#define SQLSHAPER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SqlsStatus {
  SQLS_STATUS_OK = 0,
  SQLS_STATUS_NULL_ARGUMENT = 1,
  SQLS_STATUS_INVALID_ARGUMENT = 2,
  SQLS_STATUS_CONFIG_ERROR = 3,
  SQLS_STATUS_ENVIRONMENT_ERROR = 4,
  SQLS_STATUS_INTERNAL_ERROR = 5,
  SQLS_STATUS_PANIC = 6,
} SqlsStatus;

/**
 * Cost histogram over uniform intervals. Opaque to C.
 */
typedef struct SqlsHistogram SqlsHistogram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *sqls_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sqls_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sqls_string_free(char *s);

/**
 * Creates an empty histogram of `bins` equal intervals over `[min, max)`.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum SqlsStatus sqls_histogram_new(double min, double max, size_t bins, struct SqlsHistogram **out);

/**
 * # Safety
 * `h` must be null or a handle from [`sqls_histogram_new`] not yet freed.
 */
void sqls_histogram_free(struct SqlsHistogram *h);

/**
 * Number of intervals, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t sqls_histogram_len(const struct SqlsHistogram *h);

/**
 * Adds one cost. Costs outside the range are rejected with
 * `SQLS_STATUS_INVALID_ARGUMENT`.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum SqlsStatus sqls_histogram_add(struct SqlsHistogram *h, double cost);

/**
 * Replaces all counts; `len` must equal the number of intervals.
 *
 * # Safety
 * `h` must be a live handle and `counts` must point to `len` values.
 */
enum SqlsStatus sqls_histogram_set_counts(struct SqlsHistogram *h,
                                          const uint64_t *counts,
                                          size_t len);

/**
 * Copies the counts into `out`, which must hold `len` values.
 *
 * # Safety
 * `h` must be a live handle and `out` must point to `len` writable values.
 */
enum SqlsStatus sqls_histogram_counts(const struct SqlsHistogram *h, uint64_t *out, size_t len);

/**
 * Earth mover's distance between two histograms with the same intervals.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum SqlsStatus sqls_wasserstein(const struct SqlsHistogram *a,
                                 const struct SqlsHistogram *b,
                                 double *out);

/**
 * Search objective of cost `c` for the interval `[lo, hi]`: 0 inside,
 * approaching 1 far away.
 *
 * # Safety
 * `out` must be writable.
 */
enum SqlsStatus sqls_objective(double c, double lo, double hi, double *out);

/**
 * Closeness of a template with observed `costs` to the interval `[lo, hi]`.
 *
 * # Safety
 * `costs` must point to `len` values; `out` must be writable.
 */
enum SqlsStatus sqls_closeness(const double *costs, size_t len, double lo, double hi, double *out);

/**
 * Instantiates a template given as JSON with bindings given as a JSON
 * object of placeholder name to value (e.g. `{"p_1": {"int": 5}}`).
 *
 * # Safety
 * Both inputs must be NUL-terminated strings; `out_sql` must be writable.
 */
enum SqlsStatus sqls_instantiate(const char *template_json,
                                 const char *bindings_json,
                                 char **out_sql);

/**
 * Runs the full pipeline for a config file and writes the workload to
 * `out_dir`. On success `out_manifest` receives the manifest as JSON.
 *
 * # Safety
 * Both paths must be NUL-terminated strings; `out_manifest` must be
 * writable.
 */
enum SqlsStatus sqls_generate(const char *config_path, const char *out_dir, char **out_manifest);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SQLSHAPER_H */
