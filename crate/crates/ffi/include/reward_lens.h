/* SPDX-License-Identifier: MIT OR Apache-2.0 */

#ifndef REWARD_LENS_H
#define REWARD_LENS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RlPatchMode {
  RL_PATCH_MODE_NOISING = 0,
  RL_PATCH_MODE_DENOISING = 1,
  RL_PATCH_MODE_ZERO = 2,
} RlPatchMode;

typedef enum RlSpliceRule {
  RL_SPLICE_RULE_SHARED_TOKEN_PREFIX = 0,
  RL_SPLICE_RULE_POSITIONAL = 1,
} RlSpliceRule;

// Result code of every fallible call.
typedef enum RlStatus {
  RL_STATUS_OK = 0,
  RL_STATUS_NULL_POINTER = 1,
  RL_STATUS_INVALID_UTF8 = 2,
  RL_STATUS_INVALID_ARGUMENT = 3,
  RL_STATUS_FORMAT = 4,
  RL_STATUS_NUMERIC = 5,
  RL_STATUS_IO = 6,
  RL_STATUS_BUFFER_TOO_SMALL = 7,
  RL_STATUS_PANIC = 8,
} RlStatus;

// Opaque model handle.
typedef struct RlModel RlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a model directory. On success `*out` owns a handle that must be
// released with `rl_model_free`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum RlStatus rl_model_load(const char *path, struct RlModel **out);

// Builds the seeded toy model with the given shape.
//
// # Safety
// `out` must be a writable pointer.
enum RlStatus rl_model_build_seeded(size_t n_layers,
                                    size_t d_model,
                                    size_t n_heads,
                                    size_t vocab_size,
                                    uint64_t seed,
                                    struct RlModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void rl_model_free(struct RlModel *model);

// Scalar reward of `response` after `prompt`.
//
// # Safety
// Pointers must be valid; strings NUL-terminated.
enum RlStatus rl_model_score(const struct RlModel *model,
                             const char *prompt,
                             const char *response,
                             double *out);

// Number of layers, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t rl_model_n_layers(const struct RlModel *model);

// Residual width, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t rl_model_d_model(const struct RlModel *model);

// Copies the reward direction into `buf`. `*written` receives the
// direction length; when `len` is too short nothing is copied and
// `RL_STATUS_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `buf` must hold `len` doubles; `written` must be writable.
enum RlStatus rl_model_reward_direction(const struct RlModel *model,
                                        double *buf,
                                        size_t len,
                                        size_t *written);

// Reward-lens trajectories of a preference pair, as JSON.
//
// # Safety
// Pointers must be valid; release `*out_json` with `rl_string_free`.
enum RlStatus rl_lens_trace(const struct RlModel *model,
                            const char *prompt,
                            const char *preferred,
                            const char *dispreferred,
                            char **out_json);

// Per-component attribution of a preference pair, as JSON.
//
// # Safety
// Pointers must be valid; release `*out_json` with `rl_string_free`.
enum RlStatus rl_attribute(const struct RlModel *model,
                           const char *prompt,
                           const char *preferred,
                           const char *dispreferred,
                           char **out_json);

// Patches every sublayer in turn, as JSON.
//
// # Safety
// Pointers must be valid; release `*out_json` with `rl_string_free`.
enum RlStatus rl_patch_all(const struct RlModel *model,
                           const char *prompt,
                           const char *preferred,
                           const char *dispreferred,
                           enum RlPatchMode mode,
                           enum RlSpliceRule rule,
                           char **out_json);

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on this thread.
const char *rl_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void rl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REWARD_LENS_H */
