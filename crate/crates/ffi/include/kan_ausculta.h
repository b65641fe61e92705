#ifndef KAN_AUSCULTA_H
#define KAN_AUSCULTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KaStatus {
  KA_STATUS_OK = 0,
  KA_STATUS_NULL_POINTER = 1,
  KA_STATUS_INVALID_ARGUMENT = 2,
  KA_STATUS_BUFFER_TOO_SMALL = 3,
  KA_STATUS_UTF8 = 4,
  KA_STATUS_SHAPE = 5,
  KA_STATUS_CONTRACT_VIOLATION = 6,
  KA_STATUS_INGESTION = 7,
  KA_STATUS_FINGERPRINT = 8,
  KA_STATUS_TRAINING_ABORT = 9,
  KA_STATUS_CONFIG = 10,
  KA_STATUS_IO = 11,
  KA_STATUS_JSON = 12,
  KA_STATUS_PANIC = 99,
} KaStatus;

/**
 * Opaque handle to a loaded checkpoint.
 */
typedef struct KaModel KaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next `ka_*` call on the same thread.
 */
const char *ka_last_error(void);

/**
 * Number of diagnostic classes.
 */
size_t ka_class_count(void);

/**
 * Static, NUL-terminated class name, or null when `index` is out of range.
 */
const char *ka_class_name(size_t index);

/**
 * Loads a checkpoint written by `kan-ausculta train` (`model_fold<i>.json`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer. On
 * success `*out` owns a handle that must be released with [`ka_model_free`].
 */
enum KaStatus ka_model_load(const char *path, struct KaModel **out);

/**
 * Releases a handle from [`ka_model_load`]. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ka_model_free(struct KaModel *model);

/**
 * Input dimension the model expects, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ka_model_feature_dim(const struct KaModel *model);

/**
 * Output class count of the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ka_model_class_count(const struct KaModel *model);

/**
 * Feature-layout fingerprint the model was trained against; owned by the
 * handle. Null for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *ka_model_fingerprint(const struct KaModel *model);

/**
 * Class probabilities for one raw (unscaled) feature vector.
 *
 * # Safety
 * `features` must point to `n_features` readable doubles and `probs` to
 * `probs_len` writable doubles.
 */
enum KaStatus ka_model_predict(const struct KaModel *model,
                               const double *features,
                               size_t n_features,
                               double *probs,
                               size_t probs_len);

/**
 * Feature dimension of the default extraction pipeline.
 */
size_t ka_default_feature_dim(void);

/**
 * Extracts the default feature vector from a WAV file. `*written` receives
 * the vector length, also when the buffer is too small.
 *
 * # Safety
 * `path` must be NUL-terminated, `out` must hold `out_len` doubles and
 * `written` must be valid or null.
 */
enum KaStatus ka_extract_wav(const char *path, double *out, size_t out_len, size_t *written);

/**
 * Extracts features from a WAV file and predicts with `model`. Fails with
 * `KA_STATUS_FINGERPRINT` if the model was not trained on the default layout.
 *
 * # Safety
 * As for [`ka_model_predict`] and [`ka_extract_wav`].
 */
enum KaStatus ka_model_predict_wav(const struct KaModel *model,
                                   const char *path,
                                   double *probs,
                                   size_t probs_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KAN_AUSCULTA_H */
