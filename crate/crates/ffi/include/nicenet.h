#ifndef NICENET_H
#define NICENET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum NiceStatus {
  NICE_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  NICE_STATUS_NULL_ARGUMENT = 1,
  /*
   An argument was out of range or not valid UTF-8.
   */
  NICE_STATUS_INVALID_ARGUMENT = 2,
  NICE_STATUS_CONFIG = 3,
  NICE_STATUS_DATA = 4,
  NICE_STATUS_SHAPE = 5,
  NICE_STATUS_IO = 6,
  NICE_STATUS_FORMAT = 7,
  /*
   Non-finite values during computation.
   */
  NICE_STATUS_NUMERICAL = 8,
  /*
   A panic inside the library.
   */
  NICE_STATUS_INTERNAL = 9,
} NiceStatus;

typedef struct NiceField NiceField;

typedef struct NiceModel NiceModel;

typedef struct NiceRegistration NiceRegistration;

typedef struct NiceVolume NiceVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null if none. The
 pointer stays valid until the next failing call on the same thread.
 */
const char *nice_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *nice_version(void);

/*
 Copies `depth·height·width` floats into a new volume.

 # Safety
 `data` must point to that many readable floats; `out` must be writable.
 */
enum NiceStatus nice_volume_new(size_t depth,
                                size_t height,
                                size_t width,
                                const float *data,
                                struct NiceVolume **out);

/*
 Reads a `.nii` file, or a raw blob with its `.txt` descriptor.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum NiceStatus nice_volume_load(const char *path, struct NiceVolume **out);

/*
 Writes NIfTI-1 for `.nii` paths and raw otherwise.

 # Safety
 `vol` must be a live handle and `path` a NUL-terminated string.
 */
enum NiceStatus nice_volume_save(const struct NiceVolume *vol, const char *path);

/*
 Writes `(depth, height, width)` to `out_shape[0..3]`.

 # Safety
 `vol` must be a live handle; `out_shape` must hold three `size_t`.
 */
enum NiceStatus nice_volume_shape(const struct NiceVolume *vol, size_t *out_shape);

/*
 Copies the voxels into `out`, which must hold at least `len` floats.

 # Safety
 `vol` must be a live handle; `out` must point to `len` writable floats.
 */
enum NiceStatus nice_volume_copy_data(const struct NiceVolume *vol, float *out, size_t len);

/*
 # Safety
 `vol` must be null or a handle not yet freed.
 */
void nice_volume_free(struct NiceVolume *vol);

/*
 Freshly initialised model. `config_json` holds a model configuration
 object (keys as in the CLI config's `model` section) or is null for the
 defaults.

 # Safety
 `config_json` must be null or NUL-terminated; `out` must be writable.
 */
enum NiceStatus nice_model_new(const char *config_json, uint64_t seed, struct NiceModel **out);

/*
 Loads the network stored in a training checkpoint.

 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum NiceStatus nice_model_load(const char *path, struct NiceModel **out);

/*
 Number of registration steps `L`.

 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum NiceStatus nice_model_levels(const struct NiceModel *model, size_t *out);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void nice_model_free(struct NiceModel *model);

/*
 Registers `moving` to `fixed` in one network pass. Dimensions must be
 equal and multiples of 16. Safe to call concurrently on one model.

 # Safety
 All handles must be live; `out` must be writable.
 */
enum NiceStatus nice_register(const struct NiceModel *model,
                              const struct NiceVolume *fixed,
                              const struct NiceVolume *moving,
                              struct NiceRegistration **out);

/*
 Number of fields in a registration result (`L`).

 # Safety
 `reg` must be a live handle; `out` must be writable.
 */
enum NiceStatus nice_registration_steps(const struct NiceRegistration *reg, size_t *out);

/*
 Copy of the field of step `step` (0 = coarsest, `L − 1` = final, full
 resolution).

 # Safety
 `reg` must be a live handle; `out` must be writable.
 */
enum NiceStatus nice_registration_field(const struct NiceRegistration *reg,
                                        size_t step,
                                        struct NiceField **out);

/*
 # Safety
 `reg` must be null or a handle not yet freed.
 */
void nice_registration_free(struct NiceRegistration *reg);

/*
 # Safety
 `field` must be a live handle; `out_shape` must hold three `size_t`.
 */
enum NiceStatus nice_field_shape(const struct NiceField *field, size_t *out_shape);

/*
 Copies `3·depth·height·width` floats (`u_x`, then `u_y`, then `u_z`).

 # Safety
 `field` must be a live handle; `out` must point to `len` writable floats.
 */
enum NiceStatus nice_field_copy_data(const struct NiceField *field, float *out, size_t len);

/*
 Percentage of voxels whose Jacobian determinant is ≤ 0.

 # Safety
 `field` must be a live handle; `out` must be writable.
 */
enum NiceStatus nice_field_njd_percent(const struct NiceField *field, double *out);

/*
 # Safety
 `field` must be null or a handle not yet freed.
 */
void nice_field_free(struct NiceField *field);

/*
 Trilinear warp `vol ∘ φ` with border clamping.

 # Safety
 Handles must be live; `out` must be writable.
 */
enum NiceStatus nice_warp(const struct NiceVolume *vol,
                          const struct NiceField *field,
                          struct NiceVolume **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NICENET_H */
