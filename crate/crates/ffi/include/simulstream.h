#ifndef SIMULSTREAM_H
#define SIMULSTREAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SimulStatus {
  SIMUL_STATUS_OK = 0,
  SIMUL_STATUS_NULL_POINTER = 1,
  SIMUL_STATUS_INVALID_UTF8 = 2,
  SIMUL_STATUS_CONFIG = 3,
  SIMUL_STATUS_IO = 4,
  SIMUL_STATUS_MODEL = 5,
  SIMUL_STATUS_INVALID_INPUT = 6,
  SIMUL_STATUS_UNDEFINED_METRIC = 7,
  SIMUL_STATUS_PANIC = 99,
} SimulStatus;

/**
 * Opaque engine handle.
 */
typedef struct SimulEngine SimulEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds an engine from TOML configuration text (same format as the CLI's
 * `--config` file).
 *
 * # Safety
 * `config_toml` must be a valid NUL-terminated string and `out` a valid
 * pointer to writable storage for one handle.
 */
enum SimulStatus simulstream_engine_new(const char *config_toml, struct SimulEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must come from [`simulstream_engine_new`] and not be used again.
 */
void simulstream_engine_free(struct SimulEngine *engine);

/**
 * Simulates one whitespace-tokenized source sentence and returns its
 * trajectory as a JSON object in `out_json`.
 *
 * # Safety
 * `engine` must be a live handle, `source` a valid NUL-terminated string and
 * `out_json` a valid pointer. The returned string must be released with
 * [`simulstream_string_free`].
 */
enum SimulStatus simulstream_engine_simulate(const struct SimulEngine *engine,
                                             const char *source,
                                             uint64_t sentence_id,
                                             char **out_json);

/**
 * Length-adaptive average lagging of one hypothesis whose per-unit delays
 * are given in source units.
 *
 * # Safety
 * `delays` must point to `len` readable values and `out` must be valid.
 */
enum SimulStatus simulstream_laal(const size_t *delays,
                                  size_t len,
                                  size_t source_len,
                                  size_t ref_len,
                                  double *out);

/**
 * Average lagging; arguments as for [`simulstream_laal`].
 *
 * # Safety
 * `delays` must point to `len` readable values and `out` must be valid.
 */
enum SimulStatus simulstream_average_lagging(const size_t *delays,
                                             size_t len,
                                             size_t source_len,
                                             size_t ref_len,
                                             double *out);

/**
 * Corpus BLEU-4 over `count` hypothesis/reference lines. `granularity_code` is
 * 0 for words, 1 for characters.
 *
 * # Safety
 * `hypotheses` and `references` must each point to `count` valid
 * NUL-terminated strings; `out` must be valid.
 */
enum SimulStatus simulstream_bleu(const char *const *hypotheses,
                                  const char *const *references,
                                  size_t count,
                                  uint32_t granularity_code,
                                  double *out);

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *simulstream_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void simulstream_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMULSTREAM_H */
