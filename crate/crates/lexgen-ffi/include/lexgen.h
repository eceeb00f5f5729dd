#ifndef LEXGEN_H
#define LEXGEN_H

/* Generated by cbindgen from lexgen-ffi; regenerate with `cbindgen --crate lexgen-ffi --output include/lexgen.h` after changing the exported surface. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a fallible call. The classes match the CLI's exit codes, so
 * a binding can report both the same way.
 */
typedef enum LexgenStatus {
  /**
   * Success.
   */
  LEXGEN_STATUS_OK = 0,
  /**
   * Caller error: null or malformed argument, unknown language tag,
   * invalid configuration.
   */
  LEXGEN_STATUS_USAGE = 1,
  /**
   * Input that could not be read or fails validation: missing file,
   * corrupt checkpoint, bad encoding.
   */
  LEXGEN_STATUS_DATA = 2,
  /**
   * A defect inside the library, never caused by input.
   */
  LEXGEN_STATUS_INTERNAL = 3,
} LexgenStatus;

/**
 * Opaque handle to a loaded model. Sharing one handle across threads for
 * prediction is safe; freeing it while another call uses it is not.
 */
typedef struct LexgenModel LexgenModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the message for the most recent failure on this thread, or an
 * empty string when nothing has failed yet. The pointer stays valid
 * until the next failing call on the same thread; do not free it.
 */
const char *lexgen_last_error_message(void);

/**
 * Returns the library version as a static NUL-terminated string; do not
 * free it.
 */
const char *lexgen_version(void);

/**
 * Loads a checkpoint file and writes a model handle to `out_model`.
 * The handle must be released with [`lexgen_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_model` a valid
 * pointer; both must stay alive for the duration of the call.
 */
enum LexgenStatus lexgen_model_load(const char *path, struct LexgenModel **out_model);

/**
 * Releases a handle from [`lexgen_model_load`]. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a handle that has not already been freed, with
 * no other call using it concurrently.
 */
void lexgen_model_free(struct LexgenModel *model);

/**
 * Returns the training step the checkpoint was saved at, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle from [`lexgen_model_load`].
 */
uint64_t lexgen_model_step(const struct LexgenModel *model);

/**
 * Returns the validation loss recorded in the checkpoint, or NaN for
 * null.
 *
 * # Safety
 * `model` must be null or a live handle from [`lexgen_model_load`].
 */
double lexgen_model_val_loss(const struct LexgenModel *model);

/**
 * Beam-searches translations of `source` into `tgt_lang` and writes a
 * JSON array to `out_json`, best first, each element an object with a
 * `"text"` string and a `"score"` number (length-normalized log
 * probability). At most `topk` results are returned; release the string
 * with [`lexgen_string_free`].
 *
 * # Safety
 * `model` must be a live handle; `tgt_lang` and `source` must be
 * NUL-terminated strings; `out_json` must be a valid pointer. All must
 * stay alive for the duration of the call.
 */
enum LexgenStatus lexgen_predict(const struct LexgenModel *model,
                                 const char *tgt_lang,
                                 const char *source,
                                 uint32_t beam_size,
                                 uint32_t topk,
                                 double length_penalty_alpha,
                                 char **out_json);

/**
 * Scores `hypothesis` against `reference_count` reference strings with
 * ChrF++ (character n-grams up to 4 plus unigram word matches, beta 2)
 * and writes the best score in [0, 100] to `out_score`.
 *
 * # Safety
 * `hypothesis` must be a NUL-terminated string; `references` must point
 * to `reference_count` NUL-terminated strings; `out_score` must be a
 * valid pointer. All must stay alive for the duration of the call.
 */
enum LexgenStatus lexgen_chrf(const char *hypothesis,
                              const char *const *references,
                              size_t reference_count,
                              double *out_score);

/**
 * Releases a string returned through an out-parameter. Null is a no-op.
 *
 * # Safety
 * `s` must be null or a string produced by this library that has not
 * already been freed.
 */
void lexgen_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEXGEN_H */
