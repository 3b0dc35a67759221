#ifndef ARTERIAL_H
#define ARTERIAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>

typedef enum ArterialMetric {
  ARTERIAL_METRIC_MAE = 0,
  ARTERIAL_METRIC_RMSE = 1,
  ARTERIAL_METRIC_MAPE = 2,
} ArterialMetric;

typedef enum ArterialStatus {
  ARTERIAL_STATUS_OK = 0,
  ARTERIAL_STATUS_NULL_POINTER = 1,
  ARTERIAL_STATUS_INVALID_ARGUMENT = 2,
  ARTERIAL_STATUS_IO = 3,
  ARTERIAL_STATUS_PARSE = 4,
  ARTERIAL_STATUS_CONFIG = 5,
  ARTERIAL_STATUS_FINGERPRINT = 6,
  ARTERIAL_STATUS_LENGTH_MISMATCH = 7,
  ARTERIAL_STATUS_NUMERIC = 8,
  ARTERIAL_STATUS_BUFFER_TOO_SMALL = 9,
  ARTERIAL_STATUS_PANIC = 10,
  ARTERIAL_STATUS_INTERNAL = 11,
} ArterialStatus;

/**
 * Phase-split-weighted detector transition matrix.
 */
typedef struct ArterialGraph ArterialGraph;

/**
 * A trained checkpoint bound to its graph.
 */
typedef struct ArterialModel ArterialModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next call into this library from the same thread.
 */
const char *arterial_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *arterial_version(void);

/**
 * Builds the transition matrix for `plan_id` from a topology and a plan book
 * (both TOML files). `epsilon` is the sparsification threshold.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum ArterialStatus arterial_graph_build(const char *topology_path,
                                         const char *plans_path,
                                         const char *plan_id,
                                         double epsilon,
                                         struct ArterialGraph **out);

/**
 * Reads a matrix written by `arterial build-graph`.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ArterialStatus arterial_graph_read_csv(const char *path, struct ArterialGraph **out);

/**
 * # Safety
 * `graph` must come from this library and not have been freed.
 */
enum ArterialStatus arterial_graph_num_detectors(const struct ArterialGraph *graph, size_t *out);

/**
 * Copies the `D × D` weights, row-major, into `out` (length `len`).
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum ArterialStatus arterial_graph_weights(const struct ArterialGraph *graph,
                                           double *out,
                                           size_t len);

/**
 * Writes detector `index`'s ID into `buf`; see [`arterial_graph_fingerprint`]
 * for the buffer convention.
 *
 * # Safety
 * `buf` must point to `capacity` writable bytes; `required` may be NULL.
 */
enum ArterialStatus arterial_graph_detector_id(const struct ArterialGraph *graph,
                                               size_t index,
                                               char *buf,
                                               size_t capacity,
                                               size_t *required);

/**
 * Writes the hex SHA-256 fingerprint into `buf`. When `capacity` is too
 * small the call fails with `BufferTooSmall` and `required` still receives
 * the length (without the NUL).
 *
 * # Safety
 * `buf` must point to `capacity` writable bytes; `required` may be NULL.
 */
enum ArterialStatus arterial_graph_fingerprint(const struct ArterialGraph *graph,
                                               char *buf,
                                               size_t capacity,
                                               size_t *required);

/**
 * # Safety
 * `graph` must be NULL or come from this library, freed at most once.
 */
void arterial_graph_free(struct ArterialGraph *graph);

/**
 * Loads a checkpoint and binds it to `graph`; a graph whose fingerprint
 * differs from the one used in training fails with `Fingerprint`.
 *
 * # Safety
 * `path` must be NUL-terminated; `graph` must be live; `out` writable.
 */
enum ArterialStatus arterial_model_load(const char *path,
                                        const struct ArterialGraph *graph,
                                        struct ArterialModel **out);

/**
 * Input window `S`, horizon `H`, detectors `D` and channels per detector
 * `F`. Any output pointer may be NULL.
 *
 * # Safety
 * `model` must be live.
 */
enum ArterialStatus arterial_model_shape(const struct ArterialModel *model,
                                         size_t *window,
                                         size_t *horizon,
                                         size_t *detectors,
                                         size_t *features);

/**
 * Forecasts `B` samples. `history` holds raw values `B × S × D × F`
 * row-major (oldest step first); `out` receives raw flow `B × H × D`.
 *
 * # Safety
 * `history` must hold `history_len` doubles and `out` `out_len` writable ones.
 */
enum ArterialStatus arterial_model_forecast(const struct ArterialModel *model,
                                            const double *history,
                                            size_t history_len,
                                            double *out,
                                            size_t out_len);

/**
 * # Safety
 * `model` must be NULL or come from this library, freed at most once.
 */
void arterial_model_free(struct ArterialModel *model);

/**
 * One forecast metric over `len` aligned values. MAPE is in percent and
 * skips targets below 1.
 *
 * # Safety
 * `prediction` and `target` must hold `len` doubles; `out` must be writable.
 */
enum ArterialStatus arterial_metric(enum ArterialMetric metric,
                                    const double *prediction,
                                    const double *target,
                                    size_t len,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARTERIAL_H */
