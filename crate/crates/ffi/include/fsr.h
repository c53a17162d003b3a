#ifndef FSR_H
#define FSR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FsrStatus {
  FSR_STATUS_OK = 0,
  FSR_STATUS_NULL_POINTER = 1,
  FSR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The output buffer was too small; the required size was still reported.
   */
  FSR_STATUS_BUFFER_TOO_SMALL = 3,
  FSR_STATUS_SHAPE = 4,
  FSR_STATUS_CONFIG = 5,
  /**
   * No alignment of the targets fits in the frames.
   */
  FSR_STATUS_INFEASIBLE = 6,
  FSR_STATUS_FORMAT = 7,
  FSR_STATUS_CORRUPT = 8,
  FSR_STATUS_IO = 9,
  FSR_STATUS_PANIC = 10,
  FSR_STATUS_OTHER = 11,
} FsrStatus;

typedef enum FsrDecodeMode {
  FSR_DECODE_MODE_GREEDY = 0,
  FSR_DECODE_MODE_FAST_SKIP = 1,
} FsrDecodeMode;

typedef struct FsrDataset FsrDataset;

typedef struct FsrModel FsrModel;

typedef struct FsrSkipConfig {
  double delta;
  size_t w_left;
  size_t w_right;
  size_t max_symbols_per_frame;
} FsrSkipConfig;

typedef struct FsrModelInfo {
  size_t vocab_size;
  size_t feat_dim;
  size_t hidden;
  size_t context;
  size_t subsample;
} FsrModelInfo;

typedef struct FsrDecodeStats {
  /**
   * Number of emitted tokens, even when the token buffer was too small.
   */
  size_t num_tokens;
  size_t encoded_frames;
  size_t triggered_frames;
  uint64_t joint_calls;
  uint64_t pred_calls;
  uint64_t wall_nanos;
} FsrDecodeStats;

/**
 * Borrowed view of one utterance; valid while the dataset handle lives.
 */
typedef struct FsrUtterance {
  const char *id;
  /**
   * `frames × feat_dim`, row-major.
   */
  const double *features;
  size_t frames;
  size_t feat_dim;
  const size_t *targets;
  size_t target_len;
} FsrUtterance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fsr_version(void);

/**
 * Message for the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *fsr_last_error_message(void);

struct FsrSkipConfig fsr_skip_config_default(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FsrStatus fsr_model_load(const char *path, struct FsrModel **out);

/**
 * # Safety
 * `model` must come from [`fsr_model_load`] and not be freed twice. Null is ignored.
 */
void fsr_model_free(struct FsrModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum FsrStatus fsr_model_info(const struct FsrModel *model, struct FsrModelInfo *out);

/**
 * Decode one utterance. Token ids (1-based, blank excluded) are written to
 * `tokens` up to `capacity`; `stats` always receives the full count. Pass
 * null `skip` for the default skip configuration.
 *
 * # Safety
 * `features` must hold `frames * feat_dim` doubles, `tokens` must hold
 * `capacity` values (may be null when `capacity` is 0), and `stats` must be
 * writable.
 */
enum FsrStatus fsr_decode(const struct FsrModel *model,
                          const double *features,
                          size_t frames,
                          size_t feat_dim,
                          enum FsrDecodeMode mode,
                          const struct FsrSkipConfig *skip,
                          uint32_t *tokens,
                          size_t capacity,
                          struct FsrDecodeStats *stats);

/**
 * `ln P(y|x)` of a transducer lattice. `blank_lp` is `frames × (target_len + 1)`
 * and `label_lp` is `frames × target_len`, both row-major by frame, where
 * `label_lp[t][u]` is the log-probability of emitting target `u + 1` at node `(t, u)`.
 *
 * # Safety
 * The arrays must hold the stated number of doubles and `out` must be writable.
 */
enum FsrStatus fsr_transducer_logprob(const double *blank_lp,
                                      const double *label_lp,
                                      size_t frames,
                                      size_t target_len,
                                      double *out);

/**
 * `ln P_CTC(y|x)` from per-frame log-softmax rows (`frames × num_classes`,
 * blank at class 0) and target ids in `1..num_classes`.
 *
 * # Safety
 * `frame_logprobs` must hold `frames * num_classes` doubles, `targets` must
 * hold `target_len` values and `out` must be writable.
 */
enum FsrStatus fsr_ctc_logprob(const double *frame_logprobs,
                               size_t frames,
                               size_t num_classes,
                               const uint32_t *targets,
                               size_t target_len,
                               double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FsrStatus fsr_dataset_load(const char *path, struct FsrDataset **out);

/**
 * # Safety
 * `dataset` must come from [`fsr_dataset_load`] and not be freed twice. Null is ignored.
 */
void fsr_dataset_free(struct FsrDataset *dataset);

/**
 * Number of utterances; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t fsr_dataset_len(const struct FsrDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle and `vocab_size`, `feat_dim` writable.
 */
enum FsrStatus fsr_dataset_dims(const struct FsrDataset *dataset,
                                size_t *vocab_size,
                                size_t *feat_dim);

/**
 * # Safety
 * `dataset` must be a live handle and `out` writable. The view borrows from
 * the handle.
 */
enum FsrStatus fsr_dataset_utterance(const struct FsrDataset *dataset,
                                     size_t index,
                                     struct FsrUtterance *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FSR_H */
