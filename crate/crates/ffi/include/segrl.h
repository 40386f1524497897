#ifndef SEGRL_H
#define SEGRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SEGRL_OK 0

#define SEGRL_ERR_NULL_POINTER 1

#define SEGRL_ERR_INVALID_ARGUMENT 2

#define SEGRL_ERR_PARSE 3

#define SEGRL_ERR_IO 4

#define SEGRL_ERR_PROVIDER 5

#define SEGRL_ERR_NUMERIC 6

#define SEGRL_ERR_CONFIG 7

#define SEGRL_ERR_BUFFER_TOO_SMALL 8

#define SEGRL_ERR_PANIC 99

/**
 * A saved training state.
 */
typedef struct SegrlCheckpoint SegrlCheckpoint;

/**
 * Reward settings.
 */
typedef struct SegrlRewardConfig SegrlRewardConfig;

/**
 * A referring-segmentation task.
 */
typedef struct SegrlTask SegrlTask;

/**
 * A training run in progress.
 */
typedef struct SegrlTrainer SegrlTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, static storage.
 */
const char *segrl_version(void);

/**
 * Message of the calling thread's last failed call, or NULL. Valid until
 * the thread's next call into the library.
 */
const char *segrl_last_error(void);

void segrl_string_free(char *s);

/**
 * IoU of two `width * height` masks; 1 when both are empty.
 */
int32_t segrl_iou(const uint8_t *a,
                  const uint8_t *b,
                  uint32_t width,
                  uint32_t height,
                  double *out_iou);

/**
 * Run-length encodes a mask as `{"size":[h,w],"counts":[...]}`.
 */
int32_t segrl_rle_encode(const uint8_t *mask, uint32_t width, uint32_t height, char **out_json);

/**
 * Decodes RLE JSON into `out_mask` (capacity in bytes). The dimensions are
 * written even when the buffer is too small.
 */
int32_t segrl_rle_decode(const char *json,
                         uint8_t *out_mask,
                         size_t capacity,
                         uint32_t *out_width,
                         uint32_t *out_height);

/**
 * Group-normalized advantages of `n` rewards into `out_advantages[n]`.
 */
int32_t segrl_compute_advantages(const double *rewards,
                                 size_t n,
                                 double std_floor,
                                 double *out_advantages);

/**
 * Per-token KL estimate `u - ln u - 1`, `u = exp(logp_ref - logp_theta)`.
 */
int32_t segrl_kl_term(double logp_theta, double logp_ref, double *out_value);

/**
 * Clipped surrogate of one token; `out_clipped` may be NULL.
 */
int32_t segrl_surrogate_token(double ratio,
                              double advantage,
                              double eps_low,
                              double eps_high,
                              double *out_value,
                              bool *out_clipped);

struct SegrlRewardConfig *segrl_reward_config_default(void);

/**
 * Parses a reward config; omitted fields take their defaults.
 */
int32_t segrl_reward_config_from_json(const char *json, struct SegrlRewardConfig **out_config);

void segrl_reward_config_free(struct SegrlRewardConfig *config);

/**
 * Accuracy score for an IoU; `config` may be NULL for defaults.
 */
int32_t segrl_tiered_accuracy_reward(double iou,
                                     const struct SegrlRewardConfig *config,
                                     int64_t *out_score);

/**
 * Parses and validates a task JSON document.
 */
int32_t segrl_task_from_json(const char *json, struct SegrlTask **out_task);

/**
 * Task `index` of the dataset generated from `seed` with default scenes.
 */
int32_t segrl_task_generate(uint64_t seed, size_t index, struct SegrlTask **out_task);

int32_t segrl_task_to_json(const struct SegrlTask *task, char **out_json);

void segrl_task_free(struct SegrlTask *task);

/**
 * Scores a response against a task with the oracle segmenter; writes the
 * reward breakdown as JSON. `config` may be NULL for defaults.
 */
int32_t segrl_total_reward(const char *response,
                           const struct SegrlTask *task,
                           const struct SegrlRewardConfig *config,
                           char **out_json);

int32_t segrl_checkpoint_load(const char *path, struct SegrlCheckpoint **out_checkpoint);

void segrl_checkpoint_free(struct SegrlCheckpoint *checkpoint);

/**
 * Greedy response text of the checkpoint's policy for a task.
 */
int32_t segrl_checkpoint_greedy_response(const struct SegrlCheckpoint *checkpoint,
                                         const struct SegrlTask *task,
                                         char **out_text);

/**
 * Evaluation report JSON for one split (`"train"` or `"eval"`) of a
 * dataset directory.
 */
int32_t segrl_checkpoint_evaluate(const struct SegrlCheckpoint *checkpoint,
                                  const char *dataset_dir,
                                  const char *split,
                                  char **out_json);

/**
 * Starts a run from a JSON training config; omitted fields take defaults.
 */
int32_t segrl_trainer_new(const char *config_json, struct SegrlTrainer **out_trainer);

/**
 * Resumes a run from a checkpoint file.
 */
int32_t segrl_trainer_from_checkpoint(const char *path, struct SegrlTrainer **out_trainer);

/**
 * One training iteration; writes its metrics JSON if `out_metrics_json`
 * is not NULL.
 */
int32_t segrl_trainer_step(struct SegrlTrainer *trainer, char **out_metrics_json);

int32_t segrl_trainer_is_done(const struct SegrlTrainer *trainer, bool *out_done);

int32_t segrl_trainer_save_checkpoint(const struct SegrlTrainer *trainer, const char *path);

void segrl_trainer_free(struct SegrlTrainer *trainer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGRL_H */
