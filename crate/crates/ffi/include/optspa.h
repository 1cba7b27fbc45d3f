#ifndef OPTSPA_H
#define OPTSPA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum OptspaStatus {
  OPTSPA_STATUS_OK = 0,
  OPTSPA_STATUS_INVALID_ARGUMENT = 1,
  OPTSPA_STATUS_NULL_POINTER = 2,
  OPTSPA_STATUS_FORMAT = 3,
  OPTSPA_STATUS_PARSE = 4,
  OPTSPA_STATUS_IO = 5,
  OPTSPA_STATUS_SEARCH_FAILED = 6,
  OPTSPA_STATUS_PANIC = 7,
} OptspaStatus;

/**
 * Importance metric used to rank weights for pruning.
 */
typedef enum OptspaMetric {
  OPTSPA_METRIC_MAGNITUDE = 0,
  OPTSPA_METRIC_WANDA = 1,
  OPTSPA_METRIC_OPTSPA = 2,
} OptspaMetric;

/**
 * Opaque calibration statistics.
 */
typedef struct OptspaCalib OptspaCalib;

/**
 * Opaque model checkpoint.
 */
typedef struct OptspaModel OptspaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *optspa_last_error(void);

/**
 * Static, human-readable name of a status code.
 */
const char *optspa_status_name(enum OptspaStatus status);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a pointer obtained from this library and not yet freed.
 */
void optspa_string_free(char *s);

/**
 * Builds a seeded random toy model.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum OptspaStatus optspa_model_generate(size_t n_layers,
                                        size_t d_model,
                                        size_t n_heads,
                                        size_t d_ff,
                                        size_t max_seq,
                                        uint64_t seed,
                                        struct OptspaModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum OptspaStatus optspa_model_load(const char *path, struct OptspaModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum OptspaStatus optspa_model_save(const struct OptspaModel *model, const char *path);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle from this library.
 */
void optspa_model_free(struct OptspaModel *model);

/**
 * Number of decoder layers, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t optspa_model_n_layers(const struct OptspaModel *model);

/**
 * Fraction of zero weights over all prunable matrices.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum OptspaStatus optspa_model_sparsity(const struct OptspaModel *model, double *out);

/**
 * Records activation norms over the first `n_samples` of `tokens`.
 *
 * # Safety
 * `tokens` must point to `n_tokens` values; `out` a valid handle slot.
 */
enum OptspaStatus optspa_calibrate(const struct OptspaModel *model,
                                   const uint32_t *tokens,
                                   size_t n_tokens,
                                   size_t n_samples,
                                   struct OptspaCalib **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum OptspaStatus optspa_calib_load(const char *path, struct OptspaCalib **out);

/**
 * # Safety
 * `calib` must be a live handle; `path` a NUL-terminated string.
 */
enum OptspaStatus optspa_calib_save(const struct OptspaCalib *calib, const char *path);

/**
 * Releases a calibration handle. Null is ignored.
 *
 * # Safety
 * `calib` must be null or a live handle from this library.
 */
void optspa_calib_free(struct OptspaCalib *calib);

/**
 * Perplexity over `tokens` in `ctx`-token windows. `kv_bits` may be null
 * with `n_kv_bits == 0` for an unquantized cache.
 *
 * # Safety
 * Pointers must be valid for the given lengths; `out_ppl` writable.
 */
enum OptspaStatus optspa_perplexity(const struct OptspaModel *model,
                                    const uint32_t *tokens,
                                    size_t n_tokens,
                                    const uint8_t *kv_bits,
                                    size_t n_kv_bits,
                                    size_t ctx,
                                    double *out_ppl);

/**
 * Prunes every matrix at `ratio`. `calib` may be null for the magnitude metric.
 *
 * # Safety
 * Handles must be live or null where allowed; `out` a valid handle slot.
 */
enum OptspaStatus optspa_prune_uniform(const struct OptspaModel *model,
                                       const struct OptspaCalib *calib,
                                       enum OptspaMetric metric,
                                       double ratio,
                                       struct OptspaModel **out);

/**
 * Prunes with a sparsity profile given as a JSON document.
 *
 * # Safety
 * `profile_json` must be a NUL-terminated string; other pointers as above.
 */
enum OptspaStatus optspa_prune_profile(const struct OptspaModel *model,
                                       const struct OptspaCalib *calib,
                                       enum OptspaMetric metric,
                                       const char *profile_json,
                                       struct OptspaModel **out);

/**
 * Quantizes `n` values to `bits`-bit codes with one shared min and step.
 *
 * # Safety
 * `values` and `out_codes` must hold `n` elements; scalars writable.
 */
enum OptspaStatus optspa_quantize(const float *values,
                                  size_t n,
                                  uint8_t bits,
                                  uint32_t *out_codes,
                                  float *out_vmin,
                                  float *out_step);

/**
 * Reconstructs `vmin + code * step` for `n` codes.
 *
 * # Safety
 * `codes` and `out_values` must hold `n` elements.
 */
enum OptspaStatus optspa_dequantize(const uint32_t *codes,
                                    size_t n,
                                    uint8_t bits,
                                    float vmin,
                                    float step,
                                    float *out_values);

/**
 * Per-layer sparsity search. On success `*out_json` holds
 * `{"best_ppl", "best", "evaluations", "ledger"}`; free it with
 * [`optspa_string_free`].
 *
 * # Safety
 * Pointers must be valid for the given lengths; `out_json` writable.
 */
enum OptspaStatus optspa_search_sparsity(const struct OptspaModel *model,
                                         const struct OptspaCalib *calib,
                                         enum OptspaMetric metric,
                                         double overall,
                                         const uint32_t *tokens,
                                         size_t n_tokens,
                                         size_t ctx,
                                         size_t trials,
                                         uint64_t seed,
                                         char **out_json);

/**
 * Per-layer KV bit-width search over {6, 8}; output as for
 * [`optspa_search_sparsity`].
 *
 * # Safety
 * Pointers must be valid for the given lengths; `out_json` writable.
 */
enum OptspaStatus optspa_search_bandwidth(const struct OptspaModel *model,
                                          const uint32_t *tokens,
                                          size_t n_tokens,
                                          size_t ctx,
                                          size_t trials,
                                          uint64_t seed,
                                          char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTSPA_H */
