#ifndef TREC_QC_H
#define TREC_QC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of coarse classes, the length of every probability array.
 */
#define QC_NUM_CLASSES 6

typedef enum QcStatus {
  QC_STATUS_OK = 0,
  QC_STATUS_NULL_POINTER = 1,
  QC_STATUS_INVALID_UTF8 = 2,
  QC_STATUS_IO = 3,
  QC_STATUS_PARSE = 4,
  QC_STATUS_INTEGRITY = 5,
  QC_STATUS_VERSION = 6,
  QC_STATUS_USAGE = 7,
  QC_STATUS_CONFIG = 8,
  QC_STATUS_NUMERIC = 9,
  QC_STATUS_DIMENSION = 10,
  QC_STATUS_INDEX = 11,
  QC_STATUS_ALIGNMENT = 12,
  QC_STATUS_UNDEFINED_METRIC = 13,
  QC_STATUS_PANIC = 14,
} QcStatus;

/**
 * Opaque handle to a loaded classifier.
 */
typedef struct QcModel QcModel;

typedef struct QcMetrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  double mse;
} QcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads an ensemble checkpoint. On success `*out` owns a model that must be
 * released with [`qc_model_free`]; on failure it is set to NULL.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QcStatus qc_model_load(const char *path, struct QcModel **out);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from [`qc_model_load`] and not be used afterwards.
 */
void qc_model_free(struct QcModel *model);

/**
 * Classifies one question. Writes the class index to `*out_class` and, when
 * `out_probs` is not NULL, the six class probabilities to `out_probs[0..6]`.
 *
 * # Safety
 * `model` must be a live handle, `text` a NUL-terminated string, `out_class`
 * valid, and `out_probs` NULL or valid for six doubles.
 */
enum QcStatus qc_model_predict(const struct QcModel *model,
                               const char *text,
                               uint32_t *out_class,
                               double *out_probs);

/**
 * Static label for a class index (`"ABBR"` ... `"NUM"`), or NULL when out of range.
 */
const char *qc_class_label(uint32_t index);

size_t qc_num_classes(void);

/**
 * Accuracy, macro precision/recall/F1 and label MSE of `n` predictions.
 *
 * # Safety
 * `preds` and `golds` must be valid for `n` values and `out` valid.
 */
enum QcStatus qc_metrics(const uint32_t *preds,
                         const uint32_t *golds,
                         size_t n,
                         struct QcMetrics *out);

/**
 * Message for the last failure on this thread, or NULL if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *qc_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREC_QC_H */
