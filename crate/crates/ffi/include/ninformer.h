#ifndef NINFORMER_H
#define NINFORMER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum NinStatus {
  NIN_STATUS_OK = 0,
  NIN_STATUS_NULL_POINTER = 1,
  NIN_STATUS_INVALID_ARGUMENT = 2,
  NIN_STATUS_IO = 3,
  NIN_STATUS_FORMAT = 4,
  NIN_STATUS_CHECKPOINT = 5,
  NIN_STATUS_NUMERIC = 6,
  NIN_STATUS_PANIC = 7,
} NinStatus;

/**
 * Opaque model handle. Create with `nin_model_from_preset`,
 * `nin_model_from_config_json` or `nin_model_load`; release with
 * `nin_model_free`.
 */
typedef struct NinModel NinModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *nin_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nin_version(void);

/**
 * Builds a freshly initialized model from a preset name such as
 * "ninformer-cifar10-paper".
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NinStatus nin_model_from_preset(const char *name, uint64_t seed, struct NinModel **out);

/**
 * Builds a freshly initialized model from a model-config JSON object.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NinStatus nin_model_from_config_json(const char *json, uint64_t seed, struct NinModel **out);

/**
 * Loads a checkpoint written by `ninformer train` or `nin_model_save`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NinStatus nin_model_load(const char *path, struct NinModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum NinStatus nin_model_save(const struct NinModel *model, const char *path);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void nin_model_free(struct NinModel *model);

/**
 * Writes the expected image height, width and channels.
 *
 * # Safety
 * All pointers must be valid.
 */
enum NinStatus nin_model_input_shape(const struct NinModel *model,
                                     size_t *height,
                                     size_t *width,
                                     size_t *channels);

/**
 * Number of classes, or 0 for a NULL model.
 *
 * # Safety
 * `model` must be NULL or come from this library.
 */
size_t nin_model_num_classes(const struct NinModel *model);

/**
 * Trainable scalar count, or 0 for a NULL model.
 *
 * # Safety
 * `model` must be NULL or come from this library.
 */
size_t nin_model_num_params(const struct NinModel *model);

/**
 * Analytic multiply-accumulates per image, or 0 for a NULL model.
 *
 * # Safety
 * `model` must be NULL or come from this library.
 */
uint64_t nin_model_flops_per_sample(const struct NinModel *model);

/**
 * Class scores for `batch` images laid out `[batch][height][width][channels]`.
 * `out_len` must equal `batch * nin_model_num_classes(model)`.
 *
 * # Safety
 * `images` must hold `batch * height * width * channels` floats and
 * `out_logits` `out_len` floats.
 */
enum NinStatus nin_model_logits(const struct NinModel *model,
                                const float *images,
                                size_t batch,
                                float *out_logits,
                                size_t out_len);

/**
 * Arg-max class per image, ties going to the lowest index.
 *
 * # Safety
 * `images` as for `nin_model_logits`; `out_labels` must hold `batch` values.
 */
enum NinStatus nin_model_predict(const struct NinModel *model,
                                 const float *images,
                                 size_t batch,
                                 uint32_t *out_labels);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NINFORMER_H */
