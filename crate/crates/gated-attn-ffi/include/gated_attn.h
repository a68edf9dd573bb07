/* C interface to the gated-attention classifier.
 *
 * Regenerate with: cargo build -p gated-attn-ffi --features bindgen
 */

#ifndef GATED_ATTN_H
#define GATED_ATTN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Everything except `Ok` leaves a message in `ga_last_error`.
typedef enum GaStatus {
  GA_STATUS_OK = 0,
  GA_STATUS_NULL_POINTER = 1,
  GA_STATUS_INVALID_UTF8 = 2,
  GA_STATUS_IO = 3,
  GA_STATUS_PARSE = 4,
  GA_STATUS_CONFIG = 5,
  GA_STATUS_CHECKPOINT = 6,
  GA_STATUS_INTERNAL = 7,
} GaStatus;

// Opaque classifier handle: the network plus its vocabulary, label names,
// and run configuration, as restored from a checkpoint.
typedef struct GaModel GaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *ga_version(void);

// Message from the calling thread's most recent failed call; empty string
// if none. Owned by the library; do not free. Invalidated by the next
// call on this thread.
const char *ga_last_error(void);

// Load a checkpoint from `path` into a fresh handle written to `out`.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum GaStatus ga_model_load(const char *path, struct GaModel **out);

// Release a handle from `ga_model_load`. Null is ignored.
//
// # Safety
// `model` must be null or a pointer previously returned by `ga_model_load`
// that has not been freed.
void ga_model_free(struct GaModel *model);

// Number of output classes of the loaded model, or 0 on null.
//
// # Safety
// `model` must be a live handle or null.
size_t ga_num_classes(const struct GaModel *model);

// Classify `text` (UTF-8, whitespace-friendly; the library tokenizes).
// Writes the winning label to `label_out` (free with `ga_string_free`)
// and, when `prob_out` is non-null, that label's probability.
//
// # Safety
// `model` must be a live handle, `text` a valid NUL-terminated string,
// `label_out` a valid pointer; `prob_out` may be null.
enum GaStatus ga_classify(const struct GaModel *model,
                          const char *text,
                          char **label_out,
                          double *prob_out);

// Classify `text` and return the full explanation record as a JSON object
// (fields: tokens, gates, alpha, p, predicted, gold; gold is empty because
// no reference label exists at inference time). Free with
// `ga_string_free`.
//
// # Safety
// `model` must be a live handle, `text` a valid NUL-terminated string,
// `json_out` a valid pointer.
enum GaStatus ga_explain_json(const struct GaModel *model, const char *text, char **json_out);

// Release a string from `ga_classify` or `ga_explain_json`. Null is
// ignored.
//
// # Safety
// `s` must be null or a string previously returned by this library that
// has not been freed.
void ga_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GATED_ATTN_H */
