#ifndef BEAMTUNE_H
#define BEAMTUNE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum bt_status {
  BT_STATUS_OK = 0,
  BT_STATUS_NULL_POINTER = 1,
  BT_STATUS_INVALID_ARGUMENT = 2,
  BT_STATUS_TASK = 3,
  BT_STATUS_PARSE = 4,
  BT_STATUS_PANIC = 5,
} bt_status;

// Why a response did not yield settings. `None` when it did.
typedef enum bt_parse_reason {
  BT_PARSE_REASON_NONE = 0,
  BT_PARSE_REASON_NO_JSON = 1,
  BT_PARSE_REASON_INVALID_JSON = 2,
  BT_PARSE_REASON_AMBIGUOUS_MULTIPLE = 3,
  BT_PARSE_REASON_MISSING_KEYS = 4,
  BT_PARSE_REASON_NON_NUMERIC = 5,
  BT_PARSE_REASON_EXTRA_KEYS_DISALLOWED = 6,
} bt_parse_reason;

// Opaque environment handle.
typedef struct bt_env bt_env;

// Magnet settings in SI units: quadrupoles in 1/m², steerers in rad.
typedef struct bt_settings {
  double q1;
  double q2;
  double cv;
  double q3;
  double ch;
} bt_settings;

// Beam parameters on the screen, mm.
typedef struct bt_beam {
  double mu_x;
  double sigma_x;
  double mu_y;
  double sigma_y;
} bt_beam;

typedef struct bt_sample {
  // Settings actually applied, after clamping.
  struct bt_settings settings;
  struct bt_beam beam;
  // mm
  double objective;
  // mm
  double mae;
  // Bit i set when magnet i (Q1, Q2, CV, Q3, CH) was clamped.
  uint8_t clamped;
} bt_sample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last non-OK status on this thread. Valid until the next call.
const char *bt_last_error(void);

// Environment on canonical trial `index` (0, 1 or 2). `noise_sigma` is in
// metres; 0 disables readout noise.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum bt_status bt_env_new_canonical(uint32_t index,
                                    double noise_sigma,
                                    uint64_t seed,
                                    struct bt_env **out);

// Environment on the trial generated from `trial_seed` with default settings.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum bt_status bt_env_new_from_seed(uint64_t trial_seed,
                                    double noise_sigma,
                                    uint64_t seed,
                                    struct bt_env **out);

// Releases an environment. Null is ignored.
//
// # Safety
// `env` must come from a `bt_env_new_*` call and not be used afterwards.
void bt_env_free(struct bt_env *env);

// Restores the initial settings and measures them.
//
// # Safety
// `env` must be a live handle; `out` may be null.
enum bt_status bt_env_reset(struct bt_env *env, struct bt_sample *out);

// Applies `settings`, clamped to the actuator limits, and measures.
//
// # Safety
// `env` and `settings` must be valid; `out` may be null.
enum bt_status bt_env_step(struct bt_env *env,
                           const struct bt_settings *settings,
                           struct bt_sample *out);

// Target beam of the environment's trial.
//
// # Safety
// `env` and `out` must be valid.
enum bt_status bt_env_target(const struct bt_env *env, struct bt_beam *out);

// Samples recorded since the last reset, the reset sample included.
//
// # Safety
// `env` must be a live handle or null (which gives 0).
size_t bt_env_history_len(const struct bt_env *env);

// Sum of absolute differences between `observed` and `target`, mm.
//
// # Safety
// All pointers must be valid.
enum bt_status bt_objective(const struct bt_beam *observed,
                            const struct bt_beam *target,
                            double *out);

// Extracts settings from a model response (UTF-8, NUL-terminated).
//
// On success `out` holds the SI settings, unclamped, and `reason` is
// `None`. A response that yields no settings returns `BT_STATUS_PARSE` and sets
// `reason`. `reason` may be null.
//
// # Safety
// `text` must be a valid C string and `out` valid.
enum bt_status bt_parse_response(const char *text,
                                 struct bt_settings *out,
                                 enum bt_parse_reason *reason);

// Static name of a status code; "unknown" for values outside the enum.
const char *bt_status_name(int32_t status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BEAMTUNE_H */
