/* C interface to the deeponet library. Generated by cbindgen. */

#pragma once

/* Generated with cbindgen:0.26.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum DonStatus {
  DON_OK = 0,
  DON_NULL_ARGUMENT = 1,
  DON_INVALID_ARGUMENT = 2,
  DON_IO_ERROR = 3,
  DON_PARSE_ERROR = 4,
  DON_SHAPE_ERROR = 5,
  DON_UNSUPPORTED = 6,
  DON_NO_CONVERGENCE = 7,
  DON_UTF8_ERROR = 8,
  DON_INTERNAL = 9,
} DonStatus;

/**
 * Opaque operator-dataset handle.
 */
typedef struct DonDataset DonDataset;

/**
 * Opaque DeepONet model handle.
 */
typedef struct DonModel DonModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static C string.
 */
const char *don_version(void);

/**
 * Message for the most recent failure on this thread. Valid until the
 * next failing call from the same thread.
 */
const char *don_last_error_message(void);

/**
 * Loads a JSON checkpoint into a fresh model handle.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string, `out` a valid pointer.
 */
enum DonStatus don_model_load(const char *path, struct DonModel **out);

/**
 * Saves a model handle as a JSON checkpoint.
 *
 * # Safety
 * `model` must be a live handle from this library; `path` a valid
 * NUL-terminated string.
 */
enum DonStatus don_model_save(const struct DonModel *model, const char *path);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void don_model_free(struct DonModel *model);

/**
 * Writes the branch and trunk input dimensions.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DonStatus don_model_input_dims(const struct DonModel *model,
                                    size_t *branch_dim,
                                    size_t *trunk_dim);

/**
 * Evaluates `<branch(x_B), trunk(x_T)>` into `out`.
 *
 * # Safety
 * `x_b`/`x_t` must point to `x_b_len`/`x_t_len` doubles; `out` must be
 * valid.
 */
enum DonStatus don_model_forward(const struct DonModel *model,
                                 const double *x_b,
                                 size_t x_b_len,
                                 const double *x_t,
                                 size_t x_t_len,
                                 double *out);

/**
 * Writes the composite capacity measure into `out`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DonStatus don_model_composite(const struct DonModel *model, double *out);

/**
 * Returns the full capacity report as a JSON string (released with
 * `don_string_free`).
 *
 * # Safety
 * Pointers must be valid.
 */
enum DonStatus don_model_capacity_json(const struct DonModel *model, char **out);

/**
 * Loads a JSON Lines dataset into a fresh handle.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string, `out` a valid pointer.
 */
enum DonStatus don_dataset_load(const char *path, struct DonDataset **out);

/**
 * Releases a dataset handle. Null is a no-op.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void don_dataset_free(struct DonDataset *dataset);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be a live handle or null.
 */
size_t don_dataset_len(const struct DonDataset *dataset);

/**
 * Empirical Rademacher complexity bound of the model class at the
 * model's own composite capacity, on the given dataset, with product
 * contraction constant `contraction_l` (1.0 for abs activations).
 *
 * # Safety
 * Pointers must be valid.
 */
enum DonStatus don_empirical_rademacher_bound(const struct DonModel *model,
                                              const struct DonDataset *dataset,
                                              double contraction_l,
                                              double *out);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void don_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus
