#ifndef FILS_H
#define FILS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum FilsStatus {
  FILS_STATUS_OK = 0,
  FILS_STATUS_NULL_POINTER = 1,
  FILS_STATUS_INVALID_UTF8 = 2,
  FILS_STATUS_INVALID_ARGUMENT = 3,
  FILS_STATUS_IO = 4,
  FILS_STATUS_FORMAT = 5,
  FILS_STATUS_CONFIG = 6,
  FILS_STATUS_SHAPE = 7,
  FILS_STATUS_NON_FINITE = 8,
  FILS_STATUS_ALREADY_EXISTS = 9,
  /**
   * Output buffer shorter than required; the required length is reported.
   */
  FILS_STATUS_BUFFER_TOO_SMALL = 10,
  FILS_STATUS_INTERNAL = 11,
  FILS_STATUS_PANIC = 12,
} FilsStatus;

/**
 * A decoded video clip.
 */
typedef struct FilsClip FilsClip;

/**
 * A loaded checkpoint (or a random-init encoder) ready for inference.
 */
typedef struct FilsModel FilsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *fils_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fils_version(void);

/**
 * Render the dataset described by the config's `[data]` section.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string.
 */
enum FilsStatus fils_generate_dataset(const char *config_path, bool force);

/**
 * Load a stored clip file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum FilsStatus fils_clip_load(const char *path, struct FilsClip **out);

/**
 * Look a clip up by manifest id (e.g. `val/000003`) under a dataset directory.
 *
 * # Safety
 * String arguments must be valid NUL-terminated strings and `out` valid.
 */
enum FilsStatus fils_clip_find(const char *data_dir, const char *id, struct FilsClip **out);

/**
 * # Safety
 * `clip` must be null or a handle from this library not yet freed.
 */
void fils_clip_free(struct FilsClip *clip);

/**
 * Clip geometry and action label.
 *
 * # Safety
 * `clip` must be a live handle; output pointers must be valid.
 */
enum FilsStatus fils_clip_info(const struct FilsClip *clip,
                               size_t *frames,
                               size_t *height,
                               size_t *width,
                               size_t *label);

/**
 * Copy the caption into `buf` (NUL-terminated). `len_out` receives the
 * caption length in bytes without the terminator.
 *
 * # Safety
 * `clip` must be live; `buf` valid for `cap` bytes; `len_out` null or valid.
 */
enum FilsStatus fils_clip_caption(const struct FilsClip *clip,
                                  char *buf,
                                  size_t cap,
                                  size_t *len_out);

/**
 * Pixels as `[frames, height, width, 3]` row-major f32 in [0, 1].
 *
 * # Safety
 * `clip` must be live; `buf` valid for `cap` floats; `len_out` null or valid.
 */
enum FilsStatus fils_clip_pixels(const struct FilsClip *clip,
                                 float *buf,
                                 size_t cap,
                                 size_t *len_out);

/**
 * Action-area mask over the config's spatial grid, row-major `[Hy, Wx]`,
 * 1 for selected patches.
 *
 * # Safety
 * `config_path` must be a valid string, `clip` live, `mask` valid for `cap`
 * bytes, `hy`/`wx` valid.
 */
enum FilsStatus fils_clip_action_area(const char *config_path,
                                      const struct FilsClip *clip,
                                      uint8_t *mask,
                                      size_t cap,
                                      size_t *hy,
                                      size_t *wx);

/**
 * Load a checkpoint written by `fils pretrain`.
 *
 * # Safety
 * `path` must be a valid string and `out` a valid pointer.
 */
enum FilsStatus fils_model_load(const char *path, struct FilsModel **out);

/**
 * Untrained model with the architecture of a config file.
 *
 * # Safety
 * `config_path` must be a valid string and `out` a valid pointer.
 */
enum FilsStatus fils_model_random_init(const char *config_path,
                                       uint64_t seed,
                                       struct FilsModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void fils_model_free(struct FilsModel *model);

/**
 * Feature width D of [`fils_model_embed`].
 *
 * # Safety
 * `model` must be live and `dim` valid.
 */
enum FilsStatus fils_model_embed_dim(const struct FilsModel *model, size_t *dim);

/**
 * Mean-pooled full-view student features of one clip, `D` floats.
 *
 * # Safety
 * Handles must be live; `buf` valid for `cap` floats; `len_out` null or valid.
 */
enum FilsStatus fils_model_embed(const struct FilsModel *model,
                                 const struct FilsClip *clip,
                                 float *buf,
                                 size_t cap,
                                 size_t *len_out);

/**
 * Text-to-patch similarity heatmap, row-major `[Hy, Wx]` in [0, 1].
 *
 * # Safety
 * Handles must be live; `text` a valid string; `buf` valid for `cap` floats;
 * `hy`/`wx` valid.
 */
enum FilsStatus fils_model_heatmap(const struct FilsModel *model,
                                   const struct FilsClip *clip,
                                   const char *text,
                                   float *buf,
                                   size_t cap,
                                   size_t *hy,
                                   size_t *wx);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FILS_H */
