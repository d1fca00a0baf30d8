#ifndef SPIKEGRAPH_H
#define SPIKEGRAPH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_ARGUMENT = 1,
  SG_STATUS_INVALID_CONFIG = 2,
  SG_STATUS_IO = 3,
  SG_STATUS_FORMAT = 4,
  SG_STATUS_SHAPE = 5,
  SG_STATUS_GRAPH = 6,
  SG_STATUS_TRAINING = 7,
  SG_STATUS_BUFFER_TOO_SMALL = 8,
  SG_STATUS_PANIC = 9,
} SgStatus;

/**
 * Synthetic benchmark selector.
 */
typedef enum SgSbmMode {
  SG_SBM_MODE_PATTERN = 0,
  SG_SBM_MODE_CLUSTER = 1,
} SgSbmMode;

/**
 * Dataset split selector.
 */
typedef enum SgSplit {
  SG_SPLIT_TRAIN = 0,
  SG_SPLIT_VAL = 1,
  SG_SPLIT_TEST = 2,
} SgSplit;

/**
 * A loaded dataset with its splits.
 */
typedef struct SgDataset SgDataset;

/**
 * A trained model.
 */
typedef struct SgModel SgModel;

/**
 * A resumable training session.
 */
typedef struct SgTrainer SgTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sg_version(void);

/**
 * Loads a dataset directory in the canonical layout.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SgStatus sg_dataset_load(const char *path, struct SgDataset **out);

/**
 * Generates `graphs` stochastic block model graphs with the benchmark
 * parameters of `mode`. 10% of graphs go to validation and 10% to test.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SgStatus sg_dataset_generate_sbm(enum SgSbmMode mode,
                                      size_t graphs,
                                      uint64_t seed,
                                      struct SgDataset **out);

/**
 * Writes the dataset in the canonical layout.
 *
 * # Safety
 * `ds` must come from this library and `dir` be a NUL-terminated string.
 */
enum SgStatus sg_dataset_export(const struct SgDataset *ds, const char *dir);

/**
 * Node count, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this library.
 */
size_t sg_dataset_num_nodes(const struct SgDataset *ds);

/**
 * Class count, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this library.
 */
size_t sg_dataset_num_classes(const struct SgDataset *ds);

/**
 * Feature width, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this library.
 */
size_t sg_dataset_feature_dim(const struct SgDataset *ds);

/**
 * # Safety
 * `ds` must be null or come from this library and not be used afterwards.
 */
void sg_dataset_free(struct SgDataset *ds);

/**
 * Starts a training session. `config` holds `key = value` lines in the
 * configuration-file grammar and may be null for the dataset defaults.
 *
 * # Safety
 * `ds` must come from this library, `config` be null or NUL-terminated and
 * `out` a valid pointer.
 */
enum SgStatus sg_trainer_new(const struct SgDataset *ds,
                             const char *config,
                             struct SgTrainer **out);

/**
 * Runs `epochs` training epochs on `ds`.
 *
 * # Safety
 * Both handles must come from this library.
 */
enum SgStatus sg_trainer_step(struct SgTrainer *t, const struct SgDataset *ds, size_t epochs);

/**
 * Completed epochs, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or come from this library.
 */
size_t sg_trainer_epoch(const struct SgTrainer *t);

/**
 * Copies the per-epoch training loss into `buf` (capacity `len`) and
 * stores the trace length in `written`. Fails with `BufferTooSmall` when
 * `len` is short; `written` is still set.
 *
 * # Safety
 * `buf` must hold `len` floats; `written` must be valid.
 */
enum SgStatus sg_trainer_loss_trace(const struct SgTrainer *t,
                                    float *buf,
                                    size_t len,
                                    size_t *written);

/**
 * Saves a resumable checkpoint.
 *
 * # Safety
 * `t` must come from this library and `path` be NUL-terminated.
 */
enum SgStatus sg_trainer_save(const struct SgTrainer *t, const char *path);

/**
 * Resumes a session from a checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum SgStatus sg_trainer_load(const char *path, struct SgTrainer **out);

/**
 * The model with the best validation accuracy seen so far.
 *
 * # Safety
 * `t` must come from this library and `out` be valid.
 */
enum SgStatus sg_trainer_best_model(const struct SgTrainer *t, struct SgModel **out);

/**
 * # Safety
 * `t` must be null or come from this library and not be used afterwards.
 */
void sg_trainer_free(struct SgTrainer *t);

/**
 * Loads the best-validation model stored in a checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum SgStatus sg_model_load(const char *path, struct SgModel **out);

/**
 * Accuracy and mean decision step on a split.
 *
 * # Safety
 * Handles must come from this library; `accuracy` and `mean_steps` must be
 * valid or null.
 */
enum SgStatus sg_model_evaluate(const struct SgModel *m,
                                const struct SgDataset *ds,
                                enum SgSplit split,
                                float *accuracy,
                                double *mean_steps);

/**
 * Per-layer firing rates on the dataset's probe graph.
 *
 * # Safety
 * See [`sg_trainer_loss_trace`] for the buffer contract.
 */
enum SgStatus sg_model_firing_rates(const struct SgModel *m,
                                    const struct SgDataset *ds,
                                    double *buf,
                                    size_t len,
                                    size_t *written);

/**
 * Feature-transform compression ratio of one evaluation pass.
 *
 * # Safety
 * Handles must come from this library; `ratio` must be valid.
 */
enum SgStatus sg_model_compression_ratio(const struct SgModel *m,
                                         const struct SgDataset *ds,
                                         double *ratio);

/**
 * # Safety
 * `m` must be null or come from this library and not be used afterwards.
 */
void sg_model_free(struct SgModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIKEGRAPH_H */
