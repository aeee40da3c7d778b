#ifndef TSMIXER_H
#define TSMIXER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every `tsm_*` call.
 */
typedef enum TsmStatus {
  TSM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TSM_STATUS_NULL_POINTER = 1,
  /**
   * A length, string, or scalar argument was out of range.
   */
  TSM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Invalid configuration or incompatible model inputs.
   */
  TSM_STATUS_CONFIG = 3,
  /**
   * Filesystem failure.
   */
  TSM_STATUS_IO = 4,
  /**
   * Malformed checkpoint, CSV, or schema.
   */
  TSM_STATUS_FORMAT = 5,
  /**
   * Tensor shape mismatch inside the engine.
   */
  TSM_STATUS_SHAPE = 6,
  /**
   * Non-finite values or out-of-domain parameters.
   */
  TSM_STATUS_NUMERIC = 7,
  /**
   * A metric is undefined for the given series.
   */
  TSM_STATUS_METRIC = 8,
  /**
   * Internal invariant violated.
   */
  TSM_STATUS_INTERNAL = 9,
  /**
   * A Rust panic was caught at the boundary.
   */
  TSM_STATUS_PANIC = 10,
} TsmStatus;

/**
 * Opaque handle to a loaded checkpoint.
 */
typedef struct TsmModel TsmModel;

/**
 * Shapes a loaded model expects and produces.
 */
typedef struct TsmModelInfo {
  size_t lookback;
  size_t horizon;
  size_t targets;
  /**
   * Columns per history row: targets then historical covariates.
   */
  size_t history_width;
  /**
   * Columns per future-covariate row; 0 when unused.
   */
  size_t future_width;
  /**
   * Number of static values; 0 when unused.
   */
  size_t static_width;
  /**
   * Columns per forecast row: `targets`, or `2 * targets` with the
   * negative binomial head (mean then dispersion for each target).
   */
  size_t output_width;
  bool negative_binomial;
} TsmModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *tsm_version(void);

/**
 * Message for the most recent call on this thread; empty after a success.
 * The pointer stays valid until the next `tsm_*` call on the same thread.
 */
const char *tsm_last_error_message(void);

/**
 * Loads the checkpoint directory `dir` (as written by `tsmixer train`) and
 * stores a new handle in `*out`.
 *
 * # Safety
 * `dir` must be a nul-terminated UTF-8 string and `out` a valid pointer.
 */
enum TsmStatus tsm_model_load(const char *dir, struct TsmModel **out);

/**
 * Releases a handle from [`tsm_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tsm_model_free(struct TsmModel *model);

/**
 * Writes the model's input and output shapes to `*out`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TsmStatus tsm_model_info(const struct TsmModel *model, struct TsmModelInfo *out);

/**
 * Forecasts one horizon from inputs in original units.
 *
 * `history` is `lookback x history_width`, `future` is
 * `horizon x future_width` (may be null when that width is 0), `statics`
 * holds `static_width` values (may be null when 0), and `out` receives
 * `horizon x output_width` values. All lengths count `double`s.
 *
 * # Safety
 * Each non-null pointer must reference at least its stated length.
 */
enum TsmStatus tsm_model_forecast(const struct TsmModel *model,
                                  const double *history,
                                  size_t history_len,
                                  const double *future,
                                  size_t future_len,
                                  const double *statics,
                                  size_t statics_len,
                                  double *out,
                                  size_t out_len);

/**
 * Root mean squared scaled error of `forecast` against `actual` (both
 * `len` values), scaled by the one-step differences of `history`.
 *
 * # Safety
 * Pointers must reference at least their stated lengths; `out` must be valid.
 */
enum TsmStatus tsm_rmsse(const double *forecast,
                         const double *actual,
                         size_t len,
                         const double *history,
                         size_t history_len,
                         double *out);

/**
 * Runs the closed-form linear forecaster checks on `trials` random series
 * per check and writes whether every bound held to `*passed`.
 *
 * # Safety
 * `passed` must be a valid pointer.
 */
enum TsmStatus tsm_verify_theory(size_t period,
                                 size_t lookback,
                                 size_t horizon,
                                 double lipschitz,
                                 size_t trials,
                                 uint64_t seed,
                                 bool *passed);

/**
 * Fills `out` with `len` steps of a seeded random-phase series of the given
 * period and amplitude.
 *
 * # Safety
 * `out` must reference at least `len` doubles.
 */
enum TsmStatus tsm_synth_periodic(size_t period,
                                  double amplitude,
                                  uint64_t seed,
                                  double *out,
                                  size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSMIXER_H */
