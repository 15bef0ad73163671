#ifndef TMAXER_H
#define TMAXER_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * TCM variant codes.
 */
#define TMX_TCM_MAXPOOL 0

#define TMX_TCM_AVGPOOL 1

#define TMX_TCM_SUBSAMPLE 2

#define TMX_TCM_CONV 3

#define TMX_TCM_ATTENTION 4

typedef enum TmxStatus {
  TMX_STATUS_OK = 0,
  TMX_STATUS_NULL_POINTER = 1,
  TMX_STATUS_INVALID_ARGUMENT = 2,
  TMX_STATUS_NON_FINITE = 3,
  TMX_STATUS_FORMAT = 4,
  TMX_STATUS_SCHEMA = 5,
  TMX_STATUS_IO = 6,
  TMX_STATUS_CONFIG = 7,
  TMX_STATUS_DIVERGED = 8,
  TMX_STATUS_OUT_OF_RANGE = 9,
  TMX_STATUS_PANIC = 10,
} TmxStatus;

/**
 * Opaque `T x D` clip-feature sequence.
 */
typedef struct TmxFeatures TmxFeatures;

/**
 * Opaque model: configuration plus weights.
 */
typedef struct TmxModel TmxModel;

/**
 * Opaque list of scored segments, best first.
 */
typedef struct TmxSegments TmxSegments;

typedef struct TmxModelConfig {
  uint32_t input_dim;
  uint32_t embed_dim;
  uint32_t num_levels;
  /**
   * One of the `TMX_TCM_*` codes.
   */
  uint32_t tcm_variant;
  uint32_t tcm_kernel;
  uint32_t num_classes;
  uint32_t head_kernel;
} TmxModelConfig;

/**
 * Decoding and suppression knobs of `tmx_infer`.
 */
typedef struct TmxInferOptions {
  double score_threshold;
  uint32_t pre_nms_topk;
  /**
   * Non-zero clips segments to the video extent.
   */
  uint8_t clip_to_video;
  /**
   * Non-zero selects hard NMS instead of Gaussian Soft-NMS.
   */
  uint8_t hard_nms;
  double sigma;
  double min_score;
  double iou_threshold;
  uint32_t max_segments;
} TmxInferOptions;

typedef struct TmxSegment {
  double start;
  double end;
  double score;
  uint32_t label;
} TmxSegment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next `tmx_*` call on the same thread.
 */
const char *tmx_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tmx_version(void);

/**
 * Writes the default model configuration to `out`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `TmxModelConfig`.
 */
enum TmxStatus tmx_model_config_default(struct TmxModelConfig *out);

/**
 * Freshly initialized model.
 *
 * # Safety
 * `config` must be null or valid; `out` must be null or writable.
 */
enum TmxStatus tmx_model_new(const struct TmxModelConfig *config,
                             uint64_t seed,
                             struct TmxModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` null or writable.
 */
enum TmxStatus tmx_model_load(const char *path, struct TmxModel **out);

/**
 * Writes the model as a checkpoint file.
 *
 * # Safety
 * `model` must be null or a live handle; `path` null or NUL-terminated.
 */
enum TmxStatus tmx_model_save(const struct TmxModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a live handle; `out` null or writable.
 */
enum TmxStatus tmx_model_config(const struct TmxModel *model, struct TmxModelConfig *out);

/**
 * # Safety
 * `model` must be null or a live handle; `out` null or writable.
 */
enum TmxStatus tmx_model_count_params(const struct TmxModel *model, uint64_t *out);

/**
 * Multiply-accumulates of one forward pass over `length` clips.
 *
 * # Safety
 * `model` must be null or a live handle; `out` null or writable.
 */
enum TmxStatus tmx_model_count_macs(const struct TmxModel *model, uint64_t length, uint64_t *out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tmx_model_free(struct TmxModel *model);

/**
 * Copies `rows * cols` time-major values.
 *
 * # Safety
 * `data` must be null or point to `rows * cols` readable doubles; `out`
 * null or writable.
 */
enum TmxStatus tmx_features_new(const double *data,
                                uint64_t rows,
                                uint64_t cols,
                                struct TmxFeatures **out);

/**
 * # Safety
 * `path` must be null or NUL-terminated; `out` null or writable.
 */
enum TmxStatus tmx_features_read(const char *path, struct TmxFeatures **out);

/**
 * # Safety
 * `features` must be null or a live handle; `path` null or NUL-terminated.
 */
enum TmxStatus tmx_features_write(const struct TmxFeatures *features, const char *path);

/**
 * # Safety
 * `features` must be null or a live handle; `rows`/`cols` null or writable.
 */
enum TmxStatus tmx_features_shape(const struct TmxFeatures *features,
                                  uint64_t *rows,
                                  uint64_t *cols);

/**
 * # Safety
 * `features` must be null or a handle not yet freed.
 */
void tmx_features_free(struct TmxFeatures *features);

/**
 * # Safety
 * `out` must be null or writable.
 */
enum TmxStatus tmx_infer_options_default(struct TmxInferOptions *out);

/**
 * Runs the model on one video. `options` may be null for defaults.
 *
 * # Safety
 * `model` and `features` must be null or live handles; `options` null or
 * valid; `out` null or writable.
 */
enum TmxStatus tmx_infer(const struct TmxModel *model,
                         const struct TmxFeatures *features,
                         const struct TmxInferOptions *options,
                         struct TmxSegments **out);

/**
 * # Safety
 * `segments` must be null or a live handle; `out` null or writable.
 */
enum TmxStatus tmx_segments_len(const struct TmxSegments *segments, uint64_t *out);

/**
 * # Safety
 * `segments` must be null or a live handle; `out` null or writable.
 */
enum TmxStatus tmx_segments_get(const struct TmxSegments *segments,
                                uint64_t index,
                                struct TmxSegment *out);

/**
 * # Safety
 * `segments` must be null or a handle not yet freed.
 */
void tmx_segments_free(struct TmxSegments *segments);

/**
 * Temporal IoU of `[a_start, a_end]` and `[b_start, b_end]`.
 */
double tmx_tiou(double a_start, double a_end, double b_start, double b_end);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TMAXER_H */
