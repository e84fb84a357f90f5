#ifndef KSCERT_H
#define KSCERT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum KsStatus {
  KS_STATUS_OK = 0,
  KS_STATUS_NULL_POINTER = 1,
  KS_STATUS_INVALID_UTF8 = 2,
  KS_STATUS_CONFIG = 3,
  KS_STATUS_DOMAIN = 4,
  KS_STATUS_SOLVER = 5,
  KS_STATUS_CFL = 6,
  KS_STATUS_POSITIVITY = 7,
  KS_STATUS_STRIDE = 8,
  KS_STATUS_IO = 9,
  /**
   * Output buffer too small or unknown name.
   */
  KS_STATUS_RANGE = 10,
  KS_STATUS_PANIC = 11,
} KsStatus;

/**
 * Parsed, validated run configuration.
 */
typedef struct KsConfig KsConfig;

/**
 * A finished (possibly aborted) run with its certificate report.
 */
typedef struct KsRun KsRun;

/**
 * Admissibility of an exponent pair, see [`ks_check_params`].
 */
typedef struct KsAdmissibility {
  bool p_ok;
  bool q_ok;
  bool pq_cond;
  bool chi_ok;
  /**
   * False when the window is empty; `q_low`/`q_high` are then NaN.
   */
  bool has_window;
  double q_low;
  double q_high;
  double coefficient_floor;
  double exponent_infimum;
  bool fully_admissible;
} KsAdmissibility;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ks_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ks_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void ks_string_free(char *s);

/**
 * Parses a TOML config.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KsStatus ks_config_parse(const char *toml, struct KsConfig **out);

/**
 * # Safety
 * `cfg` must come from [`ks_config_parse`] and not be freed twice.
 */
void ks_config_free(struct KsConfig *cfg);

/**
 * SHA-256 of the config text as a new hex string.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum KsStatus ks_config_hash(const struct KsConfig *cfg, char **out);

/**
 * Admissibility report for (chi, p, q) in dimension `dim`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum KsStatus ks_check_params(double chi,
                              double p,
                              double q,
                              uint32_t dim,
                              struct KsAdmissibility *out);

/**
 * Endpoints of the admissible q window for (p, chi).
 *
 * # Safety
 * `low` and `high` must be valid pointers.
 */
enum KsStatus ks_q_window(double p, double chi, double *low, double *high);

/**
 * Infimum over s >= 0 of the supersolution coefficient.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum KsStatus ks_coefficient_lower_bound(double p, double q, double chi, double *out);

/**
 * Upper bound for solutions of y' = -a y^2 + b started at +infinity.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum KsStatus ks_coth_bound(double a, double b, double t, double *out);

/**
 * Simulates and certifies a config. An aborted run still yields a handle
 * (check [`ks_run_completed`]); only invalid inputs fail.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum KsStatus ks_run(const struct KsConfig *cfg, struct KsRun **out);

/**
 * # Safety
 * `run` must come from [`ks_run`] and not be freed twice.
 */
void ks_run_free(struct KsRun *run);

/**
 * 1 if the run reached its final time, 0 if it aborted, -1 on NULL.
 *
 * # Safety
 * `run` must be a live handle or NULL.
 */
int32_t ks_run_completed(const struct KsRun *run);

/**
 * 1 if no certificate failed, 0 otherwise, -1 on NULL.
 *
 * # Safety
 * `run` must be a live handle or NULL.
 */
int32_t ks_run_all_pass(const struct KsRun *run);

/**
 * Number of monitor records (accepted steps plus the initial state).
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum KsStatus ks_run_num_records(const struct KsRun *run, size_t *out);

/**
 * Copies one monitor column (e.g. "t", "mass_n", "min_c") into `buf`,
 * which must hold at least [`ks_run_num_records`] values.
 *
 * # Safety
 * `column` must be NUL-terminated and `buf` valid for `len` writes.
 */
enum KsStatus ks_run_monitor_column(const struct KsRun *run,
                                    const char *column,
                                    double *buf,
                                    size_t len);

/**
 * Copies the final cell field "n", "c" or "p" (x fastest) into `buf`.
 *
 * # Safety
 * `field` must be NUL-terminated and `buf` valid for `len` writes.
 */
enum KsStatus ks_run_final_field(const struct KsRun *run,
                                 const char *field,
                                 double *buf,
                                 size_t len);

/**
 * Certificate report as a new JSON string.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum KsStatus ks_run_report_json(const struct KsRun *run, char **out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* KSCERT_H */
