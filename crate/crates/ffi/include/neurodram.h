#ifndef NEURODRAM_H
#define NEURODRAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NdStatus {
  ND_STATUS_OK = 0,
  ND_STATUS_NULL_ARGUMENT = 1,
  ND_STATUS_INVALID_ARGUMENT = 2,
  ND_STATUS_IO = 3,
  ND_STATUS_FORMAT = 4,
  ND_STATUS_DATA = 5,
  ND_STATUS_PANIC = 6,
} NdStatus;

// A loaded model checkpoint.
typedef struct NdModel NdModel;

// One volume, voxels in z, y, x order.
typedef struct NdVolume NdVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library from the same thread.
const char *nd_last_error(void);

// Reads a volume file written by `neurodram generate`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum NdStatus nd_volume_read(const char *path, struct NdVolume **out);

// Copies `len` voxels of a `depth` x `height` x `width` volume. Trained
// models expect values in [0, 1].
//
// # Safety
// `voxels` must point to `len` floats and `out` be writable.
enum NdStatus nd_volume_from_voxels(size_t depth,
                                    size_t height,
                                    size_t width,
                                    const float *voxels,
                                    size_t len,
                                    struct NdVolume **out);

// Writes depth, height and width into `dims[0..3]`.
//
// # Safety
// `volume` must come from this library and `dims` hold three values.
enum NdStatus nd_volume_dims(const struct NdVolume *volume, size_t *dims);

// # Safety
// `volume` must be null or come from this library, and not be used again.
void nd_volume_free(struct NdVolume *volume);

// Loads a checkpoint written by `neurodram train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum NdStatus nd_model_load(const char *path, struct NdModel **out);

// Glimpses per episode; 0 for the convolutional baseline.
//
// # Safety
// `model` must come from this library and `steps` be writable.
enum NdStatus nd_model_steps(const struct NdModel *model, size_t *steps);

// # Safety
// `model` must be null or come from this library, and not be used again.
void nd_model_free(struct NdModel *model);

// Probability of class 1. `context_json` is a JSON object of context fields
// (absent keys are missing) or null for no context.
//
// # Safety
// Handles must come from this library; `context_json` must be null or a
// NUL-terminated string; `probability` must be writable.
enum NdStatus nd_model_predict(const struct NdModel *model,
                               const struct NdVolume *volume,
                               const char *context_json,
                               double *probability);

// Glimpse centers in voxel coordinates, three values per step. `capacity`
// is the length of `centers` and must be at least 3 x steps.
//
// # Safety
// As for [`nd_model_predict`]; `centers` must hold `capacity` values.
enum NdStatus nd_model_trace(const struct NdModel *model,
                             const struct NdVolume *volume,
                             const char *context_json,
                             double *centers,
                             size_t capacity,
                             double *probability);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEURODRAM_H */
