#ifndef NUDGERANK_H
#define NUDGERANK_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NrStatus {
  NR_STATUS_OK = 0,
  NR_STATUS_CONFIG = 1,
  NR_STATUS_DATA = 2,
  NR_STATUS_STAGE = 3,
  NR_STATUS_NULL_POINTER = 4,
  NR_STATUS_INVALID_UTF8 = 5,
  NR_STATUS_PANIC = 6,
} NrStatus;

typedef enum NrTail {
  NR_TAIL_ONE_SIDED_GREATER = 0,
  NR_TAIL_TWO_SIDED = 1,
} NrTail;

/**
 * Opaque configuration handle.
 */
typedef struct NrConfig NrConfig;

/**
 * Opaque handle to a finished experiment.
 */
typedef struct NrExperiment NrExperiment;

typedef struct NrTestResult {
  double statistic;
  double degrees_of_freedom;
  double p_value;
  /**
   * 1 when p <= 0.05.
   */
  int32_t significant;
} NrTestResult;

typedef struct NrHypotheses {
  struct NrTestResult steps;
  struct NrTestResult mvpa;
} NrHypotheses;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nr_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator, or 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t nr_last_error_message(char *buf, size_t len);

/**
 * New handle holding the built-in defaults.
 */
struct NrConfig *nr_config_default(void);

/**
 * Parses TOML text into a new handle written to `*out`.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum NrStatus nr_config_parse(const char *toml, struct NrConfig **out);

/**
 * # Safety
 * `config` must be null or a handle from this library not yet freed.
 */
void nr_config_free(struct NrConfig *config);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum NrStatus nr_config_set_seed(struct NrConfig *config, uint64_t seed);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum NrStatus nr_config_set_n_per_arm(struct NrConfig *config, size_t n);

/**
 * Runs a full simulated experiment; the result handle goes to `*out`.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum NrStatus nr_experiment_run(const struct NrConfig *config, struct NrExperiment **out);

/**
 * # Safety
 * `experiment` must be null or a handle from this library not yet freed.
 */
void nr_experiment_free(struct NrExperiment *experiment);

/**
 * # Safety
 * `experiment` must be a live handle; `out` must be writable.
 */
enum NrStatus nr_experiment_hypotheses(const struct NrExperiment *experiment,
                                       struct NrHypotheses *out);

/**
 * Audit violations plus events that name a control participant.
 *
 * # Safety
 * `experiment` must be a live handle.
 */
size_t nr_experiment_violations(const struct NrExperiment *experiment);

/**
 * Number of engagement events (sends included) produced by the run.
 *
 * # Safety
 * `experiment` must be a live handle.
 */
size_t nr_experiment_event_count(const struct NrExperiment *experiment);

/**
 * Writes every output file under `dir`; `plots != 0` adds SVG charts.
 *
 * # Safety
 * `experiment` must be a live handle; `dir` a NUL-terminated path.
 */
enum NrStatus nr_experiment_write(const struct NrExperiment *experiment,
                                  const char *dir,
                                  int32_t plots);

/**
 * Welch's t-test of the second sample against the first, from summaries.
 *
 * # Safety
 * `out` must be writable.
 */
enum NrStatus nr_welch_t(double mean1,
                         double sd1,
                         uint64_t n1,
                         double mean2,
                         double sd2,
                         uint64_t n2,
                         enum NrTail tail,
                         struct NrTestResult *out);

/**
 * Checks an event log file against the contact rules in `config` and
 * writes the violation count to `*violations`.
 *
 * # Safety
 * `config` must be a live handle, `path` NUL-terminated, `violations` writable.
 */
enum NrStatus nr_audit_events_file(const struct NrConfig *config,
                                   const char *path,
                                   size_t *violations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NUDGERANK_H */
