#ifndef CHORUS_H
#define CHORUS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ChorusStatus {
  CHORUS_STATUS_OK = 0,
  CHORUS_STATUS_NULL_POINTER = 1,
  CHORUS_STATUS_INVALID_ARGUMENT = 2,
  CHORUS_STATUS_IO = 3,
  CHORUS_STATUS_BAD_FORMAT = 4,
  CHORUS_STATUS_BUFFER_TOO_SMALL = 5,
  CHORUS_STATUS_INTERNAL = 6,
} ChorusStatus;

/**
 * Loaded checkpoint plus its class names as C strings.
 */
typedef struct ChorusClassifier ChorusClassifier;

/**
 * Result of a paired test. `degenerate` is 1 when all differences are zero.
 */
typedef struct ChorusSignificance {
  double statistic;
  double p_value;
  size_t n;
  int32_t degenerate;
} ChorusSignificance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *chorus_version(void);

/**
 * Message for the most recent failure on this thread, or an empty string.
 * Valid until the next chorus call on the same thread.
 */
const char *chorus_last_error_message(void);

/**
 * Loads a checkpoint file. On success `*out` receives a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ChorusStatus chorus_classifier_load(const char *path, struct ChorusClassifier **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from `chorus_classifier_load` and not be used afterwards.
 */
void chorus_classifier_free(struct ChorusClassifier *handle);

/**
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum ChorusStatus chorus_classifier_num_classes(const struct ChorusClassifier *handle, size_t *out);

/**
 * Sample rate the classifier expects, in Hz.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum ChorusStatus chorus_classifier_sample_rate(const struct ChorusClassifier *handle,
                                                uint32_t *out);

/**
 * Class name at `index`; the string is owned by the handle.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum ChorusStatus chorus_classifier_class_name(const struct ChorusClassifier *handle,
                                               size_t index,
                                               const char **out);

/**
 * Classifies one mono clip of float samples in [-1, 1]. Writes one
 * probability per class into `probs` (capacity `probs_len`) and the argmax
 * into `predicted` when it is not null.
 *
 * # Safety
 * `samples` must point to `n_samples` floats and `probs` to `probs_len` doubles.
 */
enum ChorusStatus chorus_classifier_classify_pcm(const struct ChorusClassifier *handle,
                                                 const float *samples,
                                                 size_t n_samples,
                                                 uint32_t sample_rate_hz,
                                                 double *probs,
                                                 size_t probs_len,
                                                 size_t *predicted);

/**
 * Two-sided paired t-test on `a - b`.
 *
 * # Safety
 * `a` and `b` must point to `n` doubles; `out` must be valid.
 */
enum ChorusStatus chorus_paired_t_test(const double *a,
                                       const double *b,
                                       size_t n,
                                       struct ChorusSignificance *out);

/**
 * Two-sided Wilcoxon signed-rank test on `a - b`; `statistic` is W+.
 *
 * # Safety
 * `a` and `b` must point to `n` doubles; `out` must be valid.
 */
enum ChorusStatus chorus_wilcoxon_signed_rank(const double *a,
                                              const double *b,
                                              size_t n,
                                              struct ChorusSignificance *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHORUS_H */
