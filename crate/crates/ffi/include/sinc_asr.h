#ifndef SINC_ASR_H
#define SINC_ASR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_ARGUMENT = 1,
  SA_STATUS_INVALID_UTF8 = 2,
  SA_STATUS_INVALID_ARGUMENT = 3,
  SA_STATUS_IO = 4,
  SA_STATUS_CHECKPOINT = 5,
  SA_STATUS_AUDIO = 6,
  SA_STATUS_INPUT_TOO_SHORT = 7,
  SA_STATUS_INTERNAL = 8,
} SaStatus;

/**
 * A loaded checkpoint ready to transcribe. Not safe to share between
 * threads without external locking.
 */
typedef struct SaRecognizer SaRecognizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if none failed.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *sa_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sa_version(void);

/**
 * Loads a checkpoint of either precision. On success `*out` owns a handle
 * that must be released with [`sa_recognizer_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SaStatus sa_recognizer_open(const char *path, struct SaRecognizer **out);

/**
 * # Safety
 * `recognizer` must be null or a handle from [`sa_recognizer_open`] that has
 * not been freed.
 */
void sa_recognizer_free(struct SaRecognizer *recognizer);

/**
 * Sample rate the model was trained at, or 0 for a null handle.
 *
 * # Safety
 * `recognizer` must be null or a live handle.
 */
uint32_t sa_recognizer_sample_rate(const struct SaRecognizer *recognizer);

/**
 * Shortest input, in samples, that yields at least one output frame.
 *
 * # Safety
 * `recognizer` must be null or a live handle.
 */
size_t sa_recognizer_min_samples(const struct SaRecognizer *recognizer);

/**
 * Number of output classes, counting the blank.
 *
 * # Safety
 * `recognizer` must be null or a live handle.
 */
size_t sa_recognizer_vocab_size(const struct SaRecognizer *recognizer);

/**
 * Greedy transcript of mono samples in [-1, 1]. On success `*out` owns a
 * string that must be released with [`sa_string_free`].
 *
 * # Safety
 * `samples` must point to `len` readable floats; `out` must be writable.
 */
enum SaStatus sa_recognizer_transcribe(const struct SaRecognizer *recognizer,
                                       const float *samples,
                                       size_t len,
                                       uint32_t sample_rate,
                                       char **out);

/**
 * Greedy transcript of a 16-bit PCM mono WAV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SaStatus sa_recognizer_transcribe_wav(const struct SaRecognizer *recognizer,
                                           const char *path,
                                           char **out);

/**
 * # Safety
 * `text` must be null or a string returned by this library, freed once.
 */
void sa_string_free(char *text);

/**
 * Levenshtein distance between two transcripts, counted in characters after
 * the same normalization the recognizer applies to training text.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` must be writable.
 */
enum SaStatus sa_edit_distance(const char *reference, const char *hypothesis, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SINC_ASR_H */
