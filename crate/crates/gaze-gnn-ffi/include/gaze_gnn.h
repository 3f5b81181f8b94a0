#ifndef GAZE_GNN_H
#define GAZE_GNN_H

/* Generated by cbindgen from the gaze-gnn-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum GgStatus {
  // Success.
  GG_STATUS_OK = 0,
  // A required pointer argument was null.
  GG_STATUS_NULL_ARGUMENT = 1,
  // An argument violated a documented precondition.
  GG_STATUS_INVALID_ARGUMENT = 2,
  // File could not be read or written.
  GG_STATUS_IO = 3,
  // Checkpoint bytes failed structural validation.
  GG_STATUS_BAD_CHECKPOINT = 4,
  // Internal invariant failure (a bug); see gg_last_error.
  GG_STATUS_INTERNAL = 5,
} GgStatus;

// Opaque fixation-list handle with its coordinate frame.
typedef struct GgFixations GgFixations;

// Opaque classifier handle.
typedef struct GgModel GgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, empty after success.
// The pointer stays valid until the next gg_* call on the same thread.
const char *gg_last_error(void);

// Builds a freshly initialized model.
//
// # Safety
// `out` must be a valid pointer to a writable `*mut GgModel` slot.
enum GgStatus gg_model_init(size_t input_size,
                            size_t patch_size,
                            size_t embed_dim,
                            size_t blocks,
                            size_t classes,
                            size_t k,
                            double lambda,
                            uint64_t seed,
                            struct GgModel **out);

// Loads a model from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a writable slot.
enum GgStatus gg_model_load(const char *path, struct GgModel **out);

// Writes the model to a checkpoint file (seed recorded as provenance).
//
// # Safety
// `model` must be a live handle from this library; `path` NUL-terminated.
enum GgStatus gg_model_save(const struct GgModel *model, const char *path, uint64_t seed);

// Releases a model handle; a null pointer is a no-op.
void gg_model_free(struct GgModel *model);

// Number of output classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t gg_model_classes(const struct GgModel *model);

// Side length of the square input frame, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t gg_model_input_size(const struct GgModel *model);

// Creates an empty fixation list over a `height` x `width` pixel frame.
//
// # Safety
// `out` must be a writable slot.
enum GgStatus gg_fixations_new(size_t height, size_t width, struct GgFixations **out);

// Appends one fixation; coordinates must lie inside the frame and the
// duration must be a positive finite number of seconds.
//
// # Safety
// `fixations` must be a live handle from this library.
enum GgStatus gg_fixations_push(struct GgFixations *fixations,
                                double row,
                                double col,
                                double duration_s);

// Number of fixations, or 0 for a null handle.
//
// # Safety
// `fixations` must be null or a live handle.
size_t gg_fixations_len(const struct GgFixations *fixations);

// Releases a fixation-list handle; a null pointer is a no-op.
void gg_fixations_free(struct GgFixations *fixations);

// Classifies one grayscale image with its gaze record.
//
// `image` holds `height * width` values in [0, 1], row-major; it is resized
// to the model frame if needed. `fixations` may be null, meaning no gaze —
// the model then sees a uniform dwell distribution; otherwise its frame must
// match `height` x `width`. `probs_out` receives `probs_len` probabilities
// (must equal the class count) and `class_out`, if non-null, the argmax.
//
// # Safety
// All pointers must be valid for their stated lengths; handles must be live.
enum GgStatus gg_predict(const struct GgModel *model,
                         const double *image,
                         size_t image_len,
                         size_t height,
                         size_t width,
                         const struct GgFixations *fixations,
                         double *probs_out,
                         size_t probs_len,
                         size_t *class_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAZE_GNN_H */
