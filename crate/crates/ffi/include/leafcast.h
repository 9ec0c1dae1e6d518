/* leafcast C ABI - generated by cbindgen, do not edit. */

#ifndef LEAFCAST_H
#define LEAFCAST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Call outcome; mirrors the CLI exit codes.
 */
typedef enum LeafcastStatus {
  LEAFCAST_STATUS_OK = 0,
  LEAFCAST_STATUS_USAGE_ERROR = 1,
  LEAFCAST_STATUS_DATA_ERROR = 2,
  LEAFCAST_STATUS_NUMERIC_ERROR = 3,
  LEAFCAST_STATUS_INTERNAL_ERROR = 4,
} LeafcastStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct LeafcastModel LeafcastModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *leafcast_version(void);

/**
 * Copies the last error message for this thread into `buf` (truncated to
 * `cap - 1` bytes, always NUL-terminated) and returns the full message
 * length in bytes. With a null buffer or zero capacity, just returns the
 * length.
 *
 * # Safety
 * `buf` must be null or point to at least `cap` writable bytes.
 */
size_t leafcast_last_error(char *buf, size_t cap);

/**
 * Generates a synthetic dataset at the config's input paths.
 *
 * # Safety
 * `config_path` must be null (defaults) or a valid NUL-terminated string.
 */
enum LeafcastStatus leafcast_run_synth(const char *config_path);

/**
 * Trains the configured model; writes the checkpoint and metrics.
 *
 * # Safety
 * `config_path` must be null (defaults) or a valid NUL-terminated string.
 */
enum LeafcastStatus leafcast_run_train(const char *config_path);

/**
 * Runs the Hyperband search; writes the report and best checkpoint.
 *
 * # Safety
 * `config_path` must be null (defaults) or a valid NUL-terminated string.
 */
enum LeafcastStatus leafcast_run_tune(const char *config_path);

/**
 * Evaluates a checkpoint on the holdout tree; writes all reports.
 *
 * # Safety
 * Both arguments must be null or valid NUL-terminated strings.
 */
enum LeafcastStatus leafcast_run_evaluate(const char *config_path, const char *checkpoint_path);

/**
 * Writes per-day predictions for every tree.
 *
 * # Safety
 * Both arguments must be null or valid NUL-terminated strings.
 */
enum LeafcastStatus leafcast_run_predict(const char *config_path, const char *checkpoint_path);

/**
 * Loads a checkpoint into an opaque model handle stored in `*out`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 * On success the caller owns the handle and must release it with
 * [`leafcast_model_free`].
 */
enum LeafcastStatus leafcast_model_load(const char *path, struct LeafcastModel **out);

/**
 * Releases a handle returned by [`leafcast_model_load`]. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer previously returned by
 * [`leafcast_model_load`] that has not been freed yet.
 */
void leafcast_model_free(struct LeafcastModel *model);

/**
 * Stores the model's expected window length (days) in `*out`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum LeafcastStatus leafcast_model_window_size(const struct LeafcastModel *model, size_t *out);

/**
 * Stores the model's expected feature count per day in `*out`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum LeafcastStatus leafcast_model_feature_count(const struct LeafcastModel *model, size_t *out);

/**
 * Stores the model's classification threshold in `*out`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum LeafcastStatus leafcast_model_threshold(const struct LeafcastModel *model, double *out);

/**
 * Runs one window through the model and stores the leaf-fall probability in
 * `*out_probability`.
 *
 * `window` is a row-major `rows x cols` matrix of scaled feature values in
 * the column order recorded in the checkpoint (`rows` = window size,
 * `cols` = feature count).
 *
 * # Safety
 * `model` must be a live handle, `window` must point to `rows * cols`
 * doubles, and `out_probability` must be a valid pointer.
 */
enum LeafcastStatus leafcast_model_predict(const struct LeafcastModel *model,
                                           const double *window,
                                           size_t rows,
                                           size_t cols,
                                           double *out_probability);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* LEAFCAST_H */
