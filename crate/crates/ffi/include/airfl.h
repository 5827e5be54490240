#ifndef AIRFL_H
#define AIRFL_H

#include <stdbool.h>
#include <stddef.h>

/**
 * Status codes shared by every entry point.
 */
typedef enum AirflStatus {
  AIRFL_STATUS_OK = 0,
  AIRFL_STATUS_NULL_POINTER = 1,
  /**
   * Invalid parameter or configuration.
   */
  AIRFL_STATUS_CONFIG = 2,
  /**
   * Power constraint or channel alignment cannot be met.
   */
  AIRFL_STATUS_INFEASIBLE = 3,
  /**
   * Singular system or violated internal invariant.
   */
  AIRFL_STATUS_NUMERICAL = 4,
  AIRFL_STATUS_IO = 5,
  AIRFL_STATUS_INVALID_UTF8 = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  AIRFL_STATUS_PANIC = 7,
} AirflStatus;

/**
 * Per-round quantity selector for [`airfl_result_metric`].
 */
typedef enum AirflMetric {
  AIRFL_METRIC_TRAIN_LOSS = 0,
  AIRFL_METRIC_GRAD_NORM_SQ = 1,
  AIRFL_METRIC_CLIP_FRACTION = 2,
  AIRFL_METRIC_MSE = 3,
  AIRFL_METRIC_LAMBDA_T = 4,
  AIRFL_METRIC_W_NORM = 5,
  AIRFL_METRIC_PHI_T = 6,
  AIRFL_METRIC_DP_EPS = 7,
} AirflMetric;

/**
 * Opaque simulation configuration.
 */
typedef struct AirflConfig AirflConfig;

/**
 * Opaque experiment outcome.
 */
typedef struct AirflResult AirflResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Length in bytes of the last error message on this thread, excluding the
 * terminating NUL.
 */
size_t airfl_last_error_length(void);

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to
 * `len - 1` bytes). Returns the number of bytes written excluding the NUL.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null with `len == 0`.
 */
size_t airfl_last_error_message(char *buf, size_t len);

/**
 * Allocates a configuration holding the defaults.
 */
struct AirflConfig *airfl_config_default(void);

/**
 * Parses a TOML configuration document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AirflStatus airfl_config_from_toml(const char *toml, struct AirflConfig **out);

/**
 * Loads a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AirflStatus airfl_config_load(const char *path, struct AirflConfig **out);

/**
 * Sets one field from a TOML value literal, e.g. `("snr", "1e3")` or
 * `("scheme", "\"clip\"")`. The configuration is left unchanged on error.
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum AirflStatus airfl_config_set(struct AirflConfig *cfg, const char *key, const char *value);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `cfg` must come from this library and not be used afterwards.
 */
void airfl_config_free(struct AirflConfig *cfg);

/**
 * Runs every trial of the configured experiment.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum AirflStatus airfl_run_experiment(const struct AirflConfig *cfg, struct AirflResult **out);

/**
 * Number of trials in a result.
 *
 * # Safety
 * `res` must be a live handle or null (which yields 0).
 */
size_t airfl_result_trials(const struct AirflResult *res);

/**
 * Number of recorded rounds in trial `trial`, or 0 if it does not exist.
 *
 * # Safety
 * `res` must be a live handle or null.
 */
size_t airfl_result_rounds(const struct AirflResult *res, size_t trial);

/**
 * Reads one per-round metric; `round` is zero-based.
 *
 * # Safety
 * `res` must be a live handle and `out` a valid pointer.
 */
enum AirflStatus airfl_result_metric(const struct AirflResult *res,
                                     size_t trial,
                                     size_t round,
                                     enum AirflMetric metric,
                                     double *out);

/**
 * Mean and standard error of the final training loss across trials.
 *
 * # Safety
 * `res` must be a live handle; `mean` and `stderr` valid pointers.
 */
enum AirflStatus airfl_result_final_loss(const struct AirflResult *res,
                                         double *mean,
                                         double *stderr);

/**
 * Writes `rounds.csv` and `summary.csv` into `dir`, creating it if needed.
 *
 * # Safety
 * `res` must be a live handle and `dir` a NUL-terminated string.
 */
enum AirflStatus airfl_result_write_csv(const struct AirflResult *res, const char *dir);

/**
 * Releases a result. Null is ignored.
 *
 * # Safety
 * `res` must come from this library and not be used afterwards.
 */
void airfl_result_free(struct AirflResult *res);

/**
 * Zero-forcing combiner for `k` channel vectors of length `m`.
 *
 * `h` holds the `m x k` channel matrix column-major with real and imaginary
 * parts interleaved (`2mk` doubles); `w_out` receives `2m` doubles.
 *
 * # Safety
 * Pointers must reference buffers of the stated lengths.
 */
enum AirflStatus airfl_zf_combiner(const double *h,
                                   size_t m,
                                   size_t k,
                                   double clip,
                                   size_t dim,
                                   double power,
                                   double *w_out);

/**
 * Budget `A` on `Σ 1/‖w_t‖²` for a target `(ε, δ)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AirflStatus airfl_privacy_budget_a(double epsilon,
                                        double delta,
                                        double c_delta,
                                        double r,
                                        double clip,
                                        double sigma2,
                                        double *out);

/**
 * Minimum-norm allocation `q_t ≥ π_t` with `Σ 1/q_t² ≤ a`.
 *
 * # Safety
 * `pi` and `q_out` must reference `len` doubles; `scaled` and `mu_star`
 * must be valid pointers or null.
 */
enum AirflStatus airfl_solve_allocation(const double *pi,
                                        size_t len,
                                        double a,
                                        double *q_out,
                                        bool *scaled,
                                        double *mu_star);

/**
 * `(ε, δ)` guarantee for an accumulated cost `min(Σφ, Φ)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AirflStatus airfl_dp_epsilon(double min_term,
                                  double delta,
                                  double c_delta,
                                  double r,
                                  double clip,
                                  double sigma2,
                                  double *out);

/**
 * Smallest admissible `c_δ` for an accumulated cost.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AirflStatus airfl_resolve_c_delta(double min_term,
                                       double delta,
                                       double r,
                                       double clip,
                                       double sigma2,
                                       double *out);

/**
 * Converts an order-`alpha` Rényi guarantee to `(ε, δ)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AirflStatus airfl_rdp_to_dp(double alpha, double rdp_eps, double delta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AIRFL_H */
