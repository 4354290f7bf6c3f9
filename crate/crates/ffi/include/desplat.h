/* C interface to the desplat engine. Generated by cbindgen. */

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call.
 */
typedef enum DsplStatus {
  DsplStatus_Ok = 0,
  DsplStatus_NullPointer = 1,
  DsplStatus_InvalidArgument = 2,
  DsplStatus_IoError = 3,
  DsplStatus_RuntimeError = 4,
} DsplStatus;

/**
 * Opaque dataset handle.
 */
typedef struct DsplDataset DsplDataset;

/**
 * Opaque image handle: row-major interleaved RGB f64 in [0, 1].
 */
typedef struct DsplImage DsplImage;

/**
 * Opaque trained-scene handle (scene model plus its training config).
 */
typedef struct DsplScene DsplScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version string; the pointer is static.
 */
const char *dspl_version(void);

/**
 * Copy the last error message (UTF-8, NUL-terminated, truncated to `len`)
 * into `buf`; returns the full message length.
 */
uintptr_t dspl_last_error_message(char *buf, uintptr_t len);

/**
 * Generate a synthetic dataset from a named preset (or NULL for defaults),
 * write it to `out_dir`, and return a handle to it.
 */
enum DsplStatus dspl_dataset_generate(const char *preset,
                                      uint64_t seed,
                                      const char *out_dir,
                                      struct DsplDataset **out);

/**
 * Open a dataset directory written by `dspl_dataset_generate` or the CLI.
 */
enum DsplStatus dspl_dataset_open(const char *dir, struct DsplDataset **out);

void dspl_dataset_free(struct DsplDataset *dataset);

/**
 * Number of frames in the dataset.
 */
enum DsplStatus dspl_dataset_frame_count(const struct DsplDataset *dataset, uintptr_t *out);

/**
 * Train a model on the dataset. `config_json` may be NULL for defaults or a
 * JSON object matching the training config schema.
 */
enum DsplStatus dspl_scene_train(const struct DsplDataset *dataset,
                                 const char *config_json,
                                 struct DsplScene **out);

/**
 * Load a scene checkpoint written by training.
 */
enum DsplStatus dspl_scene_load(const char *path, struct DsplScene **out);

/**
 * Save the scene as a checkpoint (no optimizer state).
 */
enum DsplStatus dspl_scene_save(const struct DsplScene *scene, const char *path);

void dspl_scene_free(struct DsplScene *scene);

/**
 * Sharp render of one frame at the chosen subframe ("start", "middle",
 * "end").
 */
enum DsplStatus dspl_render_sharp(const struct DsplScene *scene,
                                  const struct DsplDataset *dataset,
                                  uint32_t frame,
                                  const char *choice,
                                  struct DsplImage **out);

/**
 * Blurry prediction (subframe average) of one frame.
 */
enum DsplStatus dspl_render_blur(const struct DsplScene *scene,
                                 const struct DsplDataset *dataset,
                                 uint32_t frame,
                                 struct DsplImage **out);

/**
 * Copy of one of the dataset's stored images; `kind` is "blurry", "sharp",
 * or "static".
 */
enum DsplStatus dspl_dataset_image(const struct DsplDataset *dataset,
                                   uint32_t frame,
                                   const char *kind,
                                   struct DsplImage **out);

void dspl_image_free(struct DsplImage *image);

uintptr_t dspl_image_width(const struct DsplImage *image);

uintptr_t dspl_image_height(const struct DsplImage *image);

/**
 * Borrow the pixel buffer (width * height * 3 doubles, row-major RGB).
 * Valid until the image is freed.
 */
const double *dspl_image_data(const struct DsplImage *image);

enum DsplStatus dspl_image_write_pfm(const struct DsplImage *image, const char *path);

enum DsplStatus dspl_image_write_png(const struct DsplImage *image, const char *path);

/**
 * PSNR in dB between two images of equal size.
 */
enum DsplStatus dspl_psnr(const struct DsplImage *a, const struct DsplImage *b, double *out);

/**
 * Single-scale SSIM between two images of equal size (>= 11x11).
 */
enum DsplStatus dspl_ssim(const struct DsplImage *a, const struct DsplImage *b, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus
