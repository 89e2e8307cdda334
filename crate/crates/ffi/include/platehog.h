#ifndef PLATEHOG_H
#define PLATEHOG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PhStatus {
  PH_STATUS_OK = 0,
  // A required pointer argument was null.
  PH_STATUS_NULL_POINTER = 1,
  // An argument or option value is invalid.
  PH_STATUS_INVALID_ARGUMENT = 2,
  // Unreadable or malformed input data.
  PH_STATUS_DATA = 3,
  // Broken internal invariant, or a caught panic.
  PH_STATUS_INTERNAL = 4,
} PhStatus;

// Opaque list of detections, sorted by descending score.
typedef struct PhDetections PhDetections;

// Opaque trained model.
typedef struct PhModel PhModel;

// Scan settings. Start from `ph_scan_options_default`.
typedef struct PhScanOptions {
  uint32_t stride;
  uint32_t num_levels;
  double scale_step;
  // Index of the native-resolution level; negative picks the default.
  int32_t anchor_level;
  double nms_overlap;
  // When false the model's calibrated threshold is used.
  bool override_threshold;
  double threshold;
} PhScanOptions;

// Rectangle in pixels, origin top-left.
typedef struct PhBox {
  double x;
  double y;
  double w;
  double h;
} PhBox;

typedef struct PhDetection {
  struct PhBox bbox;
  double score;
  // Pyramid level the window was found at.
  uint32_t level;
} PhDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ph_version(void);

// Message of the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *ph_last_error(void);

// Loads a model file. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum PhStatus ph_model_load(const char *path, struct PhModel **out);

// # Safety
// `model` must come from `ph_model_load` and not be used afterwards.
// Null is accepted.
void ph_model_free(struct PhModel *model);

// Feature count per window; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t ph_model_descriptor_length(const struct PhModel *model);

// Window width and height in pixels, including padding.
//
// # Safety
// `model` must be a live handle; `width` and `height` writable.
enum PhStatus ph_model_window(const struct PhModel *model, uint32_t *width, uint32_t *height);

// Calibrated score threshold; NaN for a null handle.
//
// # Safety
// `model` must be null or a live handle.
double ph_model_threshold(const struct PhModel *model);

// # Safety
// `model` must be a live handle.
enum PhStatus ph_model_set_threshold(struct PhModel *model, double threshold);

// Stride 9, 11 levels at step 1.1, default anchor, suppression at 0.3,
// model threshold.
struct PhScanOptions ph_scan_options_default(void);

// Detects plates in an 8-bit grayscale image of `width x height` pixels
// whose rows start `row_stride` bytes apart. `options` may be null for the
// defaults. On success `*out` owns a new detection list.
//
// # Safety
// `pixels` must point to at least `row_stride * (height - 1) + width`
// readable bytes; `model` must be live; `out` writable.
enum PhStatus ph_detect_gray8(const struct PhModel *model,
                              const uint8_t *pixels,
                              uint32_t width,
                              uint32_t height,
                              size_t row_stride,
                              const struct PhScanOptions *options,
                              struct PhDetections **out);

// # Safety
// `dets` must be null or a live list.
size_t ph_detections_len(const struct PhDetections *dets);

// Copies detection `index` into `*out`.
//
// # Safety
// `dets` must be a live list and `out` writable.
enum PhStatus ph_detections_get(const struct PhDetections *dets,
                                size_t index,
                                struct PhDetection *out);

// # Safety
// `dets` must come from `ph_detect_gray8` and not be used afterwards.
// Null is accepted.
void ph_detections_free(struct PhDetections *dets);

// Intersection over union of two boxes, in [0, 1].
double ph_match_pair(struct PhBox a, struct PhBox b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLATEHOG_H */
