#ifndef PSMED_H
#define PSMED_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PSMED_METHOD_A 1

#define PSMED_METHOD_B (1 << 1)

#define PSMED_METHOD_C (1 << 2)

#define PSMED_METHOD_D (1 << 3)

#define PSMED_METHOD_MR (1 << 4)

#define PSMED_METHOD_NP (1 << 5)

#define PSMED_SCALE_DIFFERENCE 1

#define PSMED_SCALE_RATIO (1 << 1)

typedef enum PsmedMediator {
  PSMED_MEDIATOR_BINARY = 0,
  PSMED_MEDIATOR_CATEGORICAL = 1,
  PSMED_MEDIATOR_CONTINUOUS = 2,
} PsmedMediator;

typedef enum PsmedMonotonicity {
  PSMED_MONOTONICITY_STANDARD = 0,
  PSMED_MONOTONICITY_STRONG = 1,
} PsmedMonotonicity;

/**
 * Status codes. Nonzero values match the command-line exit codes where both exist.
 */
typedef enum PsmedStatus {
  PSMED_STATUS_OK = 0,
  PSMED_STATUS_ORACLE_FAILED = 1,
  PSMED_STATUS_CONFIG_ERROR = 2,
  PSMED_STATUS_DATA_ERROR = 3,
  PSMED_STATUS_ESTIMATION_ERROR = 4,
  PSMED_STATUS_NULL_POINTER = 5,
  PSMED_STATUS_OUT_OF_RANGE = 6,
  PSMED_STATUS_PANIC = 7,
} PsmedStatus;

/**
 * Opaque validated dataset.
 */
typedef struct PsmedDataset PsmedDataset;

/**
 * Opaque table of estimates.
 */
typedef struct PsmedResults PsmedResults;

/**
 * Analysis controls. Start from `psmed_options_default`.
 */
typedef struct PsmedOptions {
  /**
   * Bitwise OR of `PSMED_METHOD_*`.
   */
  uint32_t methods;
  /**
   * Bitwise OR of `PSMED_SCALE_*`.
   */
  uint32_t scales;
  size_t folds;
  /**
   * Bootstrap replicates; 0 disables bootstrap intervals.
   */
  size_t bootstrap;
  double level;
  uint64_t seed;
  double clip_floor;
} PsmedOptions;

/**
 * One output row. String fields stay valid until the owning results handle is freed.
 */
typedef struct PsmedEstimate {
  const char *estimand;
  const char *stratum;
  const char *scale;
  const char *method;
  const char *inference;
  double point;
  double se;
  double ci_low;
  double ci_high;
  size_t b_or_v;
  uint64_t seed;
} PsmedEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *psmed_version(void);

/**
 * Message of the last failure on this thread; empty when none. Valid until the next failing call.
 */
const char *psmed_last_error(void);

struct PsmedOptions psmed_options_default(void);

/**
 * Builds a dataset from `n` rows of `p` row-major covariates.
 *
 * `levels` is the largest mediator level for categorical mediators and is
 * ignored otherwise.
 *
 * # Safety
 * `x` must point to `n * p` doubles; `z`, `d`, `m`, `y` to `n` elements each;
 * `out` must be writable.
 */
enum PsmedStatus psmed_dataset_new(const double *x,
                                   size_t n,
                                   size_t p,
                                   const uint8_t *z,
                                   const uint8_t *d,
                                   const double *m,
                                   const double *y,
                                   enum PsmedMediator mediator,
                                   uint32_t levels,
                                   enum PsmedMonotonicity monotonicity,
                                   struct PsmedDataset **out);

/**
 * Draws `n` units from the built-in four-covariate simulation process.
 *
 * # Safety
 * `out` must be writable.
 */
enum PsmedStatus psmed_dataset_simulate(size_t n, uint64_t seed, struct PsmedDataset **out);

/**
 * Number of rows; 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live dataset handle.
 */
size_t psmed_dataset_rows(const struct PsmedDataset *data);

/**
 * # Safety
 * `data` must be null or a handle not yet freed.
 */
void psmed_dataset_free(struct PsmedDataset *data);

/**
 * Runs the configured estimators; `options` may be null for defaults.
 *
 * # Safety
 * `data` must be a live dataset handle, `options` null or valid, `out` writable.
 */
enum PsmedStatus psmed_analyze(const struct PsmedDataset *data,
                               const struct PsmedOptions *options,
                               struct PsmedResults **out);

/**
 * Number of rows; 0 for a null handle.
 *
 * # Safety
 * `results` must be null or a live results handle.
 */
size_t psmed_results_len(const struct PsmedResults *results);

/**
 * Copies row `index` into `out`.
 *
 * # Safety
 * `results` must be a live results handle and `out` writable.
 */
enum PsmedStatus psmed_results_get(const struct PsmedResults *results,
                                   size_t index,
                                   struct PsmedEstimate *out);

/**
 * # Safety
 * `results` must be null or a handle not yet freed.
 */
void psmed_results_free(struct PsmedResults *results);

/**
 * Certifies a discrete fixture file, or the shipped reference fixture when
 * `path` is null. Returns `OracleFailed` when any identity fails.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string.
 */
enum PsmedStatus psmed_oracle_certify(const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSMED_H */
