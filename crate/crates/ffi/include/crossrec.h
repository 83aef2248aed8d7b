#ifndef CROSSREC_H
#define CROSSREC_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrStatus {
  CR_STATUS_OK = 0,
  CR_STATUS_NULL_POINTER = 1,
  CR_STATUS_INVALID_ARGUMENT = 2,
  CR_STATUS_IO = 3,
  CR_STATUS_INVALID_DATA = 4,
  CR_STATUS_INVALID_CONFIG = 5,
  CR_STATUS_CHECKPOINT = 6,
  CR_STATUS_NUMERIC = 7,
  CR_STATUS_VOCABULARY_MISMATCH = 8,
  CR_STATUS_BUFFER_TOO_SMALL = 9,
  CR_STATUS_PANIC = 10,
} CrStatus;

/**
 * An ingested, cleaned dataset.
 */
typedef struct CrDataset CrDataset;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct CrModel CrModel;

typedef struct CrMetrics {
  double hr;
  double precision;
  double recall;
  double mrr;
  double ap;
} CrMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cr_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to fit) and returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t cr_last_error(char *buf, size_t len);

/**
 * Loads the four CSV files in `dir` and applies the cleaning steps of the
 * preparation config in `config_path` (null for defaults).
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum CrStatus cr_dataset_load(const char *dir, const char *config_path, struct CrDataset **out);

/**
 * # Safety
 * `dataset` must be null or a handle from [`cr_dataset_load`] not yet freed.
 */
void cr_dataset_free(struct CrDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle.
 */
size_t cr_dataset_n_items(const struct CrDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle.
 */
size_t cr_dataset_n_users(const struct CrDataset *dataset);

/**
 * Loads a model checkpoint written by `crossrec train` or `train-baseline`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum CrStatus cr_model_load(const char *path, struct CrModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`cr_model_load`] not yet freed.
 */
void cr_model_free(struct CrModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
size_t cr_model_n_items(const struct CrModel *model);

/**
 * Scores every catalog item for `user` at unix time `time`, from the
 * sessions since the user's previous purchase. Writes `n_items` scores;
 * higher means more likely. Owned-item filtering is left to
 * [`cr_post_filter`] with the mask from [`cr_eligibility`].
 *
 * # Safety
 * Handles must be live; `scores` must hold `len` doubles.
 */
enum CrStatus cr_model_score(const struct CrModel *model,
                             const struct CrDataset *dataset,
                             const char *user,
                             int64_t time,
                             double *scores,
                             size_t len);

/**
 * Writes 1 for each item `user` may still buy at `time`, 0 otherwise.
 *
 * # Safety
 * `dataset` must be live; `mask` must hold `len` bytes.
 */
enum CrStatus cr_eligibility(const struct CrDataset *dataset,
                             const char *user,
                             int64_t time,
                             uint8_t *mask,
                             size_t len);

/**
 * Replaces scores of ineligible items (`mask[i] == 0`) with the minimum
 * score minus one.
 *
 * # Safety
 * `scores` and `mask` must hold `n` elements, `out` must hold `n` doubles.
 */
enum CrStatus cr_post_filter(const double *scores, const uint8_t *mask, size_t n, double *out);

/**
 * Item indices by descending score, ties by ascending index.
 *
 * # Safety
 * `scores` must hold `n` doubles and `out` `n` indices.
 */
enum CrStatus cr_rank(const double *scores, size_t n, size_t *out);

/**
 * Hit rate, precision, recall, MRR and average precision of a ranking at `k`.
 *
 * # Safety
 * `ranked` must hold `n_ranked` indices and `purchased` `n_purchased`.
 */
enum CrStatus cr_metrics_at_k(const size_t *ranked,
                              size_t n_ranked,
                              const size_t *purchased,
                              size_t n_purchased,
                              size_t k,
                              struct CrMetrics *out);

/**
 * Probability that a discrete Weibull variable equals `y`.
 *
 * # Safety
 * `out` must be writable.
 */
enum CrStatus cr_weibull_pmf(int64_t y, double alpha, double beta, double *out);

/**
 * Probability that a discrete Weibull variable exceeds `y - 1`.
 *
 * # Safety
 * `out` must be writable.
 */
enum CrStatus cr_weibull_tail(int64_t y, double alpha, double beta, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum CrStatus cr_weibull_median(double alpha, double beta, double *out);

/**
 * Fits a two-component mixture to log inter-session gaps (log seconds) and
 * writes the task threshold in days.
 *
 * # Safety
 * `log_gaps` must hold `n` doubles; `out_days` must be writable.
 */
enum CrStatus cr_gap_threshold(const double *log_gaps, size_t n, double *out_days);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROSSREC_H */
