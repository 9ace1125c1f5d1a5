#ifndef APM_H
#define APM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ApmStatus {
  APM_STATUS_OK = 0,
  APM_STATUS_NULL_POINTER = 1,
  APM_STATUS_INVALID_ARGUMENT = 2,
  APM_STATUS_CONFIG = 3,
  APM_STATUS_DATA = 4,
  APM_STATUS_NUMERICAL = 5,
  /**
   * A week is already open, or none is open when settling.
   */
  APM_STATUS_STATE = 6,
  APM_STATUS_PANIC = 7,
} ApmStatus;

/**
 * Opaque market handle. Agents are external predictors identified by index.
 */
typedef struct ApmMarket ApmMarket;

typedef struct ApmTTest {
  double t;
  double p;
  size_t n;
  /**
   * Non-zero when all differences are equal and non-zero.
   */
  int32_t degenerate;
} ApmTTest;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread (empty after a
 * success). Valid until the next call into this library on the same thread.
 */
const char *apm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *apm_version(void);

/**
 * Creates a market with `n_agents` external agents.
 *
 * `config_toml` may be null for the default configuration, or a TOML
 * document with the market keys (`rounds`, `initial_budget`,
 * `payoff_bandwidth`, `budget_floor`, `[strategy]`).
 *
 * # Safety
 * `config_toml` must be null or a valid NUL-terminated string; `out` must
 * be a valid pointer to write the handle to.
 */
enum ApmStatus apm_market_new(const char *config_toml,
                              size_t n_agents,
                              uint64_t seed,
                              struct ApmMarket **out);

/**
 * # Safety
 * `market` must be null or a handle from [`apm_market_new`] not yet freed.
 */
void apm_market_free(struct ApmMarket *market);

/**
 * Opens the next week and trades all rounds. `predictions[i]` is agent
 * `i`'s prediction; NaN means the agent abstains. Writes the market
 * prediction and whether it is the fallback (no stakes this week).
 *
 * # Safety
 * `market` must be a live handle, `predictions` must point to `n` doubles
 * and the output pointers must be writable.
 */
enum ApmStatus apm_market_run_week(struct ApmMarket *market,
                                   const double *predictions,
                                   size_t n,
                                   double *out_prediction,
                                   int32_t *out_fallback);

/**
 * Settles the open week against `target` in `[0, 1]`.
 *
 * # Safety
 * `market` must be a live handle.
 */
enum ApmStatus apm_market_settle(struct ApmMarket *market, double target);

/**
 * Current budget of agent `agent`.
 *
 * # Safety
 * `market` must be a live handle and `out` writable.
 */
enum ApmStatus apm_market_budget(const struct ApmMarket *market, size_t agent, double *out);

/**
 * Investment-weighted mean of `n` predictions.
 *
 * # Safety
 * `predictions` and `investments` must point to `n` doubles; `out` writable.
 */
enum ApmStatus apm_clear(const double *predictions,
                         const double *investments,
                         size_t n,
                         double *out);

/**
 * Mean absolute error of `n` predictions against `n` truths.
 *
 * # Safety
 * `pred` and `truth` must point to `n` doubles; `out` writable.
 */
enum ApmStatus apm_mae(const double *pred, const double *truth, size_t n, double *out);

/**
 * Two-sided paired t-test on `a - b`.
 *
 * # Safety
 * `a` and `b` must point to `n` doubles; `out` writable.
 */
enum ApmStatus apm_paired_t_test(const double *a, const double *b, size_t n, struct ApmTTest *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APM_H */
