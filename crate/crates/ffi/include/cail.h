#ifndef CAIL_H
#define CAIL_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CailStatus {
  CAIL_STATUS_OK = 0,
  CAIL_STATUS_NULL_POINTER = 1,
  CAIL_STATUS_INVALID_UTF8 = 2,
  CAIL_STATUS_CONFIG = 3,
  CAIL_STATUS_RUNTIME = 4,
  CAIL_STATUS_OUT_OF_RANGE = 5,
  CAIL_STATUS_BUFFER_TOO_SMALL = 6,
  CAIL_STATUS_PANIC = 7,
} CailStatus;

// Experiment configuration.
typedef struct CailConfig CailConfig;

// Result of training one seed.
typedef struct CailRun CailRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread. The pointer stays
// valid until the next failing call on the same thread.
const char *cail_last_error_message(void);

// Static name of a status code.
const char *cail_status_name(enum CailStatus status);

// Reference experiment configuration.
enum CailStatus cail_config_default(struct CailConfig **out);

// Parses `key = value` lines; omitted keys keep their defaults.
//
// # Safety
// `src` must be a NUL-terminated string and `out` a writable pointer.
enum CailStatus cail_config_parse(const char *src, struct CailConfig **out);

// Overrides one key, validating the result. The handle is unchanged on
// failure.
//
// # Safety
// `cfg` must come from this library; `key` and `value` must be
// NUL-terminated strings.
enum CailStatus cail_config_set(struct CailConfig *cfg, const char *key, const char *value);

// Serialized configuration copied into `buf`. `needed` receives the
// length including the terminator; pass a null `buf` to query it.
//
// # Safety
// `cfg` must come from this library; `buf` must hold `cap` bytes.
enum CailStatus cail_config_to_text(const struct CailConfig *cfg,
                                    char *buf,
                                    uintptr_t cap,
                                    uintptr_t *needed);

// Number of seeds in the configuration.
//
// # Safety
// `cfg` must come from this library.
uintptr_t cail_config_seed_count(const struct CailConfig *cfg);

// # Safety
// `cfg` must come from this library and not be used afterwards.
void cail_config_free(struct CailConfig *cfg);

// Discounted return of the optimal policy on the configured grid.
//
// # Safety
// `cfg` must come from this library and `out` must be writable.
enum CailStatus cail_config_optimal_return(const struct CailConfig *cfg, double *out);

// Trains one seed with the configured method.
//
// # Safety
// `cfg` must come from this library and `out` must be writable.
enum CailStatus cail_run_seed(const struct CailConfig *cfg, uint64_t seed, struct CailRun **out);

// # Safety
// `run` must come from this library.
uintptr_t cail_run_iterations(const struct CailRun *run);

// # Safety
// `run` must come from this library.
uintptr_t cail_run_level_count(const struct CailRun *run);

// Expected return of the trained generator.
//
// # Safety
// `run` must come from this library and `out` must be writable.
enum CailStatus cail_run_final_return(const struct CailRun *run, double *out);

// Mean learned confidence of one demonstrator level.
//
// # Safety
// `run` must come from this library and `out` must be writable.
enum CailStatus cail_run_level_confidence(const struct CailRun *run, uintptr_t level, double *out);

// Per-iteration metrics in the `run_<seed>.csv` format, copied like
// [`cail_config_to_text`].
//
// # Safety
// `run` must come from this library; `buf` must hold `cap` bytes.
enum CailStatus cail_run_csv(const struct CailRun *run,
                             char *buf,
                             uintptr_t cap,
                             uintptr_t *needed);

// # Safety
// `run` must come from this library and not be used afterwards.
void cail_run_free(struct CailRun *run);

// Runs the invariant suite. `failures` receives the number of failed checks.
//
// # Safety
// `failures` must be writable.
enum CailStatus cail_check(uintptr_t *failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAIL_H */
