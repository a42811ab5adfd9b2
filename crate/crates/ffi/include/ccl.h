#ifndef CCL_H
#define CCL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CclStatus {
  CCL_STATUS_OK = 0,
  /**
   * Invalid configuration key or value.
   */
  CCL_STATUS_CONFIG = 2,
  /**
   * Missing or malformed data files.
   */
  CCL_STATUS_DATA = 3,
  /**
   * Non-finite loss or undefined metric.
   */
  CCL_STATUS_NUMERIC = 4,
  /**
   * Bad argument: null pointer, index out of range, shape mismatch.
   */
  CCL_STATUS_INVALID_INPUT = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  CCL_STATUS_PANIC = 6,
} CclStatus;

/**
 * Loaded or simulated dataset.
 */
typedef struct CclBundle CclBundle;

/**
 * Trained model parameters.
 */
typedef struct CclModel CclModel;

/**
 * Test-split metrics at the default cutoffs.
 */
typedef struct CclMetrics {
  double mae;
  double auc;
  double ndcg_at_5;
  double ndcg_at_10;
  double recall_at_1;
  double recall_at_5;
  double mrr;
  double gini;
  double global_utility;
  size_t users_evaluated;
  size_t zero_relevant_users;
} CclMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *ccl_last_error(void);

/**
 * Library version as a static string.
 */
const char *ccl_version(void);

/**
 * Loads Coat from `dir` (containing `train.ascii` and `test.ascii`).
 *
 * # Safety
 * `dir` must be a valid NUL-terminated string; `out` must be writable.
 */
enum CclStatus ccl_bundle_load_coat(const char *dir, struct CclBundle **out);

/**
 * Loads `user item rating` triple files for an `users x items` universe.
 *
 * # Safety
 * Paths must be valid NUL-terminated strings; `out` must be writable.
 */
enum CclStatus ccl_bundle_load_triples(const char *train_path,
                                       const char *test_path,
                                       size_t users,
                                       size_t items,
                                       bool one_based,
                                       uint8_t threshold,
                                       struct CclBundle **out);

/**
 * Generates a synthetic dataset. `config` holds simulator keys (`m`, `n`,
 * `latent_dim`, `exposure_skew`, `exposures_per_user`,
 * `confounder_outcome_weight`, `test_exposures_per_user`, `seed`); null uses
 * the defaults. The bundle keeps its true propensities for `propensity_source = oracle`.
 *
 * # Safety
 * `config` must be null or a valid NUL-terminated string; `out` must be writable.
 */
enum CclStatus ccl_bundle_simulate(const char *config, struct CclBundle **out);

/**
 * # Safety
 * `bundle` must be null or a live handle.
 */
size_t ccl_bundle_num_users(const struct CclBundle *bundle);

/**
 * # Safety
 * `bundle` must be null or a live handle.
 */
size_t ccl_bundle_num_items(const struct CclBundle *bundle);

/**
 * # Safety
 * `bundle` must be null or a live handle.
 */
size_t ccl_bundle_num_train(const struct CclBundle *bundle);

/**
 * # Safety
 * `bundle` must be null or a handle not yet freed.
 */
void ccl_bundle_free(struct CclBundle *bundle);

/**
 * Trains on `bundle`. `config` is `key = value` text (null for defaults).
 *
 * # Safety
 * `bundle` must be a live handle, `config` null or a valid string, `out` writable.
 */
enum CclStatus ccl_train(const struct CclBundle *bundle, const char *config, struct CclModel **out);

/**
 * Writes `len` predicted probabilities for the pairs `(users[k], items[k])`.
 *
 * # Safety
 * `users`, `items` and `scores` must each point to `len` elements.
 */
enum CclStatus ccl_model_predict(const struct CclModel *model,
                                 const size_t *users,
                                 const size_t *items,
                                 size_t len,
                                 double *scores);

/**
 * Evaluates on the bundle's test split.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum CclStatus ccl_model_evaluate(const struct CclModel *model,
                                  const struct CclBundle *bundle,
                                  struct CclMetrics *out);

/**
 * Writes a binary checkpoint.
 *
 * # Safety
 * `model` must be live; `path` a valid NUL-terminated string.
 */
enum CclStatus ccl_model_save(const struct CclModel *model, const char *path);

/**
 * Reads a checkpoint written by `ccl_model_save` or the command line.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be writable.
 */
enum CclStatus ccl_model_load(const char *path, struct CclModel **out);

/**
 * Writes one user's embedding export as tab-separated text.
 *
 * # Safety
 * Handles must be live; `path` a valid NUL-terminated string.
 */
enum CclStatus ccl_export_embeddings(const struct CclModel *model,
                                     const struct CclBundle *bundle,
                                     size_t user,
                                     const char *path);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ccl_model_free(struct CclModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCL_H */
