#ifndef DPFAIR_H
#define DPFAIR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of fairness measures written by [`dpf_fairness_evaluate`].
 */
#define DPF_MEASURE_COUNT 6

/**
 * Status code returned by every fallible function.
 */
typedef enum DpfStatus {
  DPF_STATUS_OK = 0,
  DPF_STATUS_NULL_POINTER = 1,
  DPF_STATUS_INVALID_STRING = 2,
  DPF_STATUS_IO = 3,
  DPF_STATUS_PARSE = 4,
  DPF_STATUS_DOMAIN = 5,
  DPF_STATUS_MARGINAL = 6,
  DPF_STATUS_PRIVACY = 7,
  DPF_STATUS_MODEL = 8,
  DPF_STATUS_FAIRNESS = 9,
  DPF_STATUS_CONFIG = 10,
  DPF_STATUS_PANIC = 11,
} DpfStatus;

/**
 * Opaque encoded database.
 */
typedef struct DpfDatabase DpfDatabase;

/**
 * Opaque fitted tree model.
 */
typedef struct DpfModel DpfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dpf_last_error(void);

/**
 * Load a CSV under a JSON schema.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum DpfStatus dpf_database_load(const char *schema_path,
                                 const char *csv_path,
                                 struct DpfDatabase **out);

/**
 * # Safety
 * `db` must come from this library and not be freed twice. Null is ignored.
 */
void dpf_database_free(struct DpfDatabase *db);

/**
 * Row count, or 0 for a null handle.
 *
 * # Safety
 * `db` must be null or a live handle.
 */
size_t dpf_database_row_count(const struct DpfDatabase *db);

/**
 * Attribute count, or 0 for a null handle.
 *
 * # Safety
 * `db` must be null or a live handle.
 */
size_t dpf_database_attribute_count(const struct DpfDatabase *db);

/**
 * Write the database as CSV using the schema's labels.
 *
 * # Safety
 * `db` must be a live handle and `path` a NUL-terminated string.
 */
enum DpfStatus dpf_database_write_csv(const struct DpfDatabase *db, const char *path);

/**
 * Select, measure and fit. A non-positive `rho` with `testing_mode` set
 * measures without noise.
 *
 * # Safety
 * `db` must be a live handle; `out` must be writable.
 */
enum DpfStatus dpf_model_fit(const struct DpfDatabase *db,
                             double rho,
                             bool testing_mode,
                             uint64_t seed,
                             struct DpfModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum DpfStatus dpf_model_save(const struct DpfModel *model, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DpfStatus dpf_model_load(const char *path, struct DpfModel **out);

/**
 * Draw `rows` synthetic rows on the stream selected by `seed`.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum DpfStatus dpf_model_sample(const struct DpfModel *model,
                                size_t rows,
                                uint64_t seed,
                                struct DpfDatabase **out);

/**
 * # Safety
 * `model` must come from this library and not be freed twice. Null is
 * ignored.
 */
void dpf_model_free(struct DpfModel *model);

/**
 * Evaluate the six fairness measures. Predicates are JSON objects such as
 * `{"attribute":"sex","op":"eq","value":"Female"}`; `predictions` holds one
 * byte per row, nonzero meaning positive. Measure `i` goes to `values[i]`
 * and `defined[i]` is 0 when it is undefined. The order is demographic
 * parity, overall accuracy equality, equalized odds (false positive, true
 * positive), conditional use accuracy equality (true positive, true
 * negative).
 *
 * # Safety
 * `predictions` must hold `len` bytes; `values` and `defined` must each
 * hold [`DPF_MEASURE_COUNT`] elements.
 */
enum DpfStatus dpf_fairness_evaluate(const struct DpfDatabase *db,
                                     const char *protected_json,
                                     const char *ground_truth_json,
                                     const uint8_t *predictions,
                                     size_t len,
                                     double *values,
                                     uint8_t *defined);

/**
 * zCDP budget for an (ε, δ) target.
 *
 * # Safety
 * `out` must be writable.
 */
enum DpfStatus dpf_epsilon_delta_to_rho(double epsilon, double delta, double *out);

/**
 * RDP cost at order `alpha` of spending `rho` on `attributes` one-way
 * marginals plus the `attributes - 1` edges of a spanning tree.
 *
 * # Safety
 * `out` must be writable.
 */
enum DpfStatus dpf_rdp_gamma(double rho, size_t attributes, double alpha, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPFAIR_H */
