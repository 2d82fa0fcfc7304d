#ifndef GROWTHRANK_H
#define GROWTHRANK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GrStatus {
  GR_STATUS_OK = 0,
  GR_STATUS_NULL_POINTER = 1,
  GR_STATUS_INVALID_ARGUMENT = 2,
  GR_STATUS_CONFIG = 3,
  GR_STATUS_DATA = 4,
  GR_STATUS_NUMERIC = 5,
  GR_STATUS_BUFFER_TOO_SMALL = 6,
  GR_STATUS_PANIC = 7,
} GrStatus;

/**
 * Trained ensemble with its combination state.
 */
typedef struct GrEnsemble GrEnsemble;

/**
 * Single trained network.
 */
typedef struct GrModel GrModel;

/**
 * Loaded price universe.
 */
typedef struct GrUniverse GrUniverse;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *gr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gr_version(void);

/**
 * Return-weighted cross-entropy of one sample. `y_true` and `y_pred` hold 5 values each.
 *
 * # Safety
 * `y_true` and `y_pred` must point to 5 readable doubles; `out` must be writable.
 */
enum GrStatus gr_return_weighted_loss(const double *y_true,
                                      const double *y_pred,
                                      double weight,
                                      double *out);

/**
 * Clipped cross-entropy between two 5-class distributions.
 *
 * # Safety
 * `y_true` and `y_pred` must point to 5 readable doubles; `out` must be writable.
 */
enum GrStatus gr_cross_entropy(const double *y_true, const double *y_pred, double *out);

/**
 * Ranking score of a 5-class distribution.
 *
 * # Safety
 * `p` must point to 5 readable doubles; `out` must be writable.
 */
enum GrStatus gr_score(const double *p, double *out);

/**
 * Label index 0..=4 (strong sell .. strong buy) of a next-day return.
 *
 * # Safety
 * `out` must be writable.
 */
enum GrStatus gr_assign_label(double r, uint32_t *out);

/**
 * Sample weight `min(|r|, 0.5)`.
 */
double gr_cap_return(double r);

/**
 * Combination weights from trailing per-period returns.
 * `returns` is row-major `n_members × n_periods`; `n_periods` may be 0.
 *
 * # Safety
 * `returns` must hold `n_members * n_periods` doubles; `out` must hold `out_len`.
 */
enum GrStatus gr_moe_weights(const double *returns,
                             size_t n_members,
                             size_t n_periods,
                             double *out,
                             size_t out_len);

/**
 * Annualized return of a final value reached after `n_days` trading days.
 *
 * # Safety
 * `out` must be writable.
 */
enum GrStatus gr_annualize_return(double final_value, size_t n_days, double *out);

/**
 * Annualized Sharpe ratio. `rf_daily` may be null with `rf_len` 0 for a zero rate.
 *
 * # Safety
 * Pointers must hold the stated number of doubles; `out` must be writable.
 */
enum GrStatus gr_sharpe_ratio(const double *returns,
                              size_t len,
                              const double *rf_daily,
                              size_t rf_len,
                              double *out);

/**
 * Maximum drawdown of a value series: depth (negative) and 0-based peak/trough indices.
 *
 * # Safety
 * `values` must hold `len` doubles; output pointers must be writable.
 */
enum GrStatus gr_max_drawdown(const double *values,
                              size_t len,
                              double *depth,
                              size_t *peak,
                              size_t *trough);

/**
 * Paired two-sided t-test of `a` against `b`.
 *
 * # Safety
 * `a` and `b` must hold `len` doubles; output pointers must be writable.
 */
enum GrStatus gr_t_test_paired(const double *a, const double *b, size_t len, double *t, double *p);

/**
 * Loads an OHLCV CSV and its sector map.
 *
 * # Safety
 * Paths must be NUL-terminated; `out` must be writable.
 */
enum GrStatus gr_universe_load(const char *ohlcv, const char *sectors, struct GrUniverse **out);

/**
 * # Safety
 * `u` must be null or a handle from [`gr_universe_load`] not yet freed.
 */
void gr_universe_free(struct GrUniverse *u);

/**
 * # Safety
 * `u` must be a live handle; output pointers must be writable.
 */
enum GrStatus gr_universe_shape(const struct GrUniverse *u, size_t *n_stocks, size_t *n_days);

/**
 * Next-day open-to-open return of stock `stock` anchored at `day`.
 *
 * # Safety
 * `u` must be a live handle; `out` must be writable.
 */
enum GrStatus gr_universe_daily_return(const struct GrUniverse *u,
                                       size_t stock,
                                       size_t day,
                                       double *out);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum GrStatus gr_model_load(const char *path, struct GrModel **out);

/**
 * # Safety
 * `m` must be null or a handle from [`gr_model_load`] not yet freed.
 */
void gr_model_free(struct GrModel *m);

/**
 * Window length, feature count and output width of a model.
 *
 * # Safety
 * `m` must be a live handle; output pointers must be writable.
 */
enum GrStatus gr_model_shape(const struct GrModel *m,
                             size_t *window,
                             size_t *features,
                             size_t *outputs);

/**
 * Predicts one standardized window (`window × features`, row-major by day).
 *
 * # Safety
 * `m` must be a live handle, `x` must hold `x_len` doubles and `out` `out_len`.
 */
enum GrStatus gr_model_predict(const struct GrModel *m,
                               const double *x,
                               size_t x_len,
                               uint8_t sector,
                               double *out,
                               size_t out_len);

/**
 * Loads an ensemble checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum GrStatus gr_ensemble_load(const char *path, struct GrEnsemble **out);

/**
 * # Safety
 * `e` must be null or a handle from [`gr_ensemble_load`] not yet freed.
 */
void gr_ensemble_free(struct GrEnsemble *e);

/**
 * # Safety
 * `e` must be a live handle; `out` must be writable.
 */
enum GrStatus gr_ensemble_len(const struct GrEnsemble *e, size_t *out);

/**
 * Current member weights.
 *
 * # Safety
 * `e` must be a live handle; `out` must hold `out_len` doubles.
 */
enum GrStatus gr_ensemble_weights(const struct GrEnsemble *e, double *out, size_t out_len);

/**
 * Appends one period return per member to the combination history.
 *
 * # Safety
 * `e` must be a live handle; `returns` must hold `len` doubles.
 */
enum GrStatus gr_ensemble_record_returns(struct GrEnsemble *e, const double *returns, size_t len);

/**
 * Weighted prediction of one window across all members.
 *
 * # Safety
 * `e` must be a live handle, `x` must hold `x_len` doubles and `out` `out_len`.
 */
enum GrStatus gr_ensemble_predict(const struct GrEnsemble *e,
                                  const double *x,
                                  size_t x_len,
                                  uint8_t sector,
                                  double *out,
                                  size_t out_len);

/**
 * Runs the full pipeline for a JSON config, writing artifacts under `out_dir`.
 *
 * # Safety
 * Paths must be NUL-terminated.
 */
enum GrStatus gr_run(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROWTHRANK_H */
