#ifndef MTFL_H
#define MTFL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of the C API.
typedef enum MtflStatus {
  MTFL_STATUS_OK = 0,
  MTFL_STATUS_NULL_POINTER = 1,
  MTFL_STATUS_INVALID_ARGUMENT = 2,
  MTFL_STATUS_CONFIG = 3,
  MTFL_STATUS_PARSE = 4,
  MTFL_STATUS_IO = 5,
  MTFL_STATUS_DIVERGED = 6,
  // Shape, assembly, aggregation or evaluation failure.
  MTFL_STATUS_NUMERIC = 7,
  // Dataset or embedding ingestion failure.
  MTFL_STATUS_DATA = 8,
  MTFL_STATUS_CHECKPOINT = 9,
  MTFL_STATUS_PANIC = 10,
} MtflStatus;

// Parsed experiment configuration.
typedef struct MtflConfig MtflConfig;

// Per-round metrics of one scenario run.
typedef struct MtflMetrics MtflMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or an empty string.
//
// The pointer stays valid until the next failing call on the same thread.
const char *mtfl_last_error(void);

// Library version as a static NUL-terminated string.
const char *mtfl_version(void);

// Parses and validates a TOML experiment file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum MtflStatus mtfl_config_from_file(const char *path, struct MtflConfig **out);

// Parses TOML text; relative data paths resolve against the working directory.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum MtflStatus mtfl_config_from_str(const char *text, struct MtflConfig **out);

// Replaces the experiment seed.
//
// # Safety
// `config` must be a live handle from `mtfl_config_from_*`.
enum MtflStatus mtfl_config_set_seed(struct MtflConfig *config, uint64_t seed);

// # Safety
// `config` must be null or a handle not yet freed.
void mtfl_config_free(struct MtflConfig *config);

// Runs one scenario (e.g. `"distributed_multi_task_fl"`) with the config's hyperparameters.
//
// # Safety
// `config` must be a live handle, `scenario` a NUL-terminated string and `out` a valid pointer.
enum MtflStatus mtfl_run_scenario(const struct MtflConfig *config,
                                  const char *scenario,
                                  struct MtflMetrics **out);

// # Safety
// `metrics` must be a live handle and `out` a valid pointer.
enum MtflStatus mtfl_metrics_round_count(const struct MtflMetrics *metrics, size_t *out);

// # Safety
// `metrics` must be a live handle and `out` a valid pointer.
enum MtflStatus mtfl_metrics_task_count(const struct MtflMetrics *metrics, size_t *out);

// Test accuracy of `task` after round index `round` (0-based).
//
// # Safety
// `metrics` must be a live handle and `out` a valid pointer.
enum MtflStatus mtfl_metrics_task_accuracy(const struct MtflMetrics *metrics,
                                           size_t round,
                                           size_t task,
                                           double *out);

// Mean of per-task test accuracies after round index `round` (0-based).
//
// # Safety
// `metrics` must be a live handle and `out` a valid pointer.
enum MtflStatus mtfl_metrics_mean_accuracy(const struct MtflMetrics *metrics,
                                           size_t round,
                                           double *out);

// Writes `metrics.csv` and `timing.csv` into `dir`, creating it if needed.
//
// # Safety
// `metrics` must be a live handle and `dir` a NUL-terminated string.
enum MtflStatus mtfl_metrics_write(const struct MtflMetrics *metrics, const char *dir);

// # Safety
// `metrics` must be null or a handle not yet freed.
void mtfl_metrics_free(struct MtflMetrics *metrics);

// Sample-weighted mean of `clients` update vectors of length `len`.
//
// `updates` is row-major `clients × len`; `counts[m]` is client m's sample
// count. Writes `len` values to `out`.
//
// # Safety
// `updates` must hold `clients * len` values, `counts` `clients` values and
// `out` room for `len` values.
enum MtflStatus mtfl_weighted_mean(const double *updates,
                                   const size_t *counts,
                                   size_t clients,
                                   size_t len,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTFL_H */
