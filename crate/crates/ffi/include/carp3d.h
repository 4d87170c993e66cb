#ifndef CARP3D_H
#define CARP3D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Carp3dStatus {
  CARP3D_STATUS_OK = 0,
  CARP3D_STATUS_NULL_POINTER = 1,
  CARP3D_STATUS_INVALID_ARGUMENT = 2,
  CARP3D_STATUS_IO = 3,
  CARP3D_STATUS_FORMAT = 4,
  CARP3D_STATUS_DIMENSION = 5,
  CARP3D_STATUS_NUMERIC = 6,
  CARP3D_STATUS_INTERNAL = 7,
} Carp3dStatus;

/**
 * The patch features of one slice.
 */
typedef struct Carp3dBag Carp3dBag;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct Carp3dModel Carp3dModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *carp3d_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *carp3d_version(void);

/**
 * Loads a checkpoint. Release with [`carp3d_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum Carp3dStatus carp3d_model_load(const char *path, struct Carp3dModel **out);

/**
 * # Safety
 * `model` must come from [`carp3d_model_load`] and not be used afterwards.
 */
void carp3d_model_free(struct Carp3dModel *model);

/**
 * Patch feature width the model expects.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum Carp3dStatus carp3d_model_feature_dim(const struct Carp3dModel *model, size_t *out);

/**
 * Neighbors per side the model was trained with.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum Carp3dStatus carp3d_model_neighbors(const struct Carp3dModel *model, size_t *out);

/**
 * Reads a feature file. Release with [`carp3d_bag_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum Carp3dStatus carp3d_bag_load(const char *path, struct Carp3dBag **out);

/**
 * Builds a bag from `n_patches × dim` row-major features. `coords` holds
 * `(row, col)` pairs, `2 * n_patches` values, or is null to place the
 * patches along row 0.
 *
 * # Safety
 * `features` must hold `n_patches * dim` values, `coords` (if non-null)
 * `2 * n_patches`, and `out` must be writable.
 */
enum Carp3dStatus carp3d_bag_from_features(const double *features,
                                           size_t n_patches,
                                           size_t dim,
                                           const uint32_t *coords,
                                           uint32_t patch_size_px,
                                           struct Carp3dBag **out);

/**
 * # Safety
 * `bag` must come from this library and not be used afterwards.
 */
void carp3d_bag_free(struct Carp3dBag *bag);

/**
 * # Safety
 * `bag` must be a live handle and `out` writable.
 */
enum Carp3dStatus carp3d_bag_num_patches(const struct Carp3dBag *bag, size_t *out);

/**
 * Scores one slice of interest. `bags` lists the SOI and its neighbors in
 * depth order; `soi_pos` indexes the SOI. Writes the class-1 probability to
 * `out_prob`. When `out_attention` is non-null it receives the attention
 * over the SOI's patches and must hold `attention_len` values, which must
 * equal the SOI's patch count.
 *
 * # Safety
 * `model` must be a live handle, `bags` must point to `n_bags` live bag
 * handles, and the output pointers must be writable for their lengths.
 */
enum Carp3dStatus carp3d_predict(const struct Carp3dModel *model,
                                 const struct Carp3dBag *const *bags,
                                 size_t n_bags,
                                 size_t soi_pos,
                                 double *out_prob,
                                 double *out_attention,
                                 size_t attention_len);

/**
 * Area under the ROC curve; ties count one half. Labels are 0 or 1.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values and `out` must be writable.
 */
enum Carp3dStatus carp3d_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Best F2 over all score thresholds and the threshold achieving it.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; outputs must be writable.
 */
enum Carp3dStatus carp3d_f2_sweep(const double *scores,
                                  const uint8_t *labels,
                                  size_t n,
                                  double *out_f2,
                                  double *out_threshold);

/**
 * Otsu threshold of a histogram; foreground is `bin >= threshold`.
 *
 * # Safety
 * `hist` must hold `n_bins` counts and `out` must be writable.
 */
enum Carp3dStatus carp3d_otsu_threshold(const uint64_t *hist, size_t n_bins, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARP3D_H */
