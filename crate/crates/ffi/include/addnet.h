/* C interface to the addnet multiplication-free network toolkit. */

#ifndef ADDNET_H
#define ADDNET_H

#include <stdint.h>
#include <stddef.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum AddnetStatus {
  ADDNET_STATUS_OK = 0,
  ADDNET_STATUS_NULL_POINTER = 1,
  ADDNET_STATUS_INVALID_UTF8 = 2,
  ADDNET_STATUS_IO_ERROR = 3,
  ADDNET_STATUS_SHAPE_ERROR = 4,
  ADDNET_STATUS_INTERNAL_ERROR = 5,
} AddnetStatus;

/**
 * An opaque loaded model: the network spec, its float weights, and a
 * lazily created int8 view.
 */
typedef struct AddnetModel AddnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a model file written by the `addnet` CLI.
 *
 * On success `*out` receives a handle that must be released with
 * [`addnet_model_free`].
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum AddnetStatus addnet_model_load(const char *path, struct AddnetModel **out);

/**
 * Release a model handle. Passing NULL is a no-op.
 *
 * # Safety
 * `model` must be a pointer from [`addnet_model_load`], not yet freed.
 */
void addnet_model_free(struct AddnetModel *model);

/**
 * Number of scalars one input instance must provide.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum AddnetStatus addnet_model_input_len(const struct AddnetModel *model, uintptr_t *out);

/**
 * Number of output logits per instance.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum AddnetStatus addnet_model_output_len(const struct AddnetModel *model, uintptr_t *out);

/**
 * Run one instance through the float network. `input` must hold
 * `addnet_model_input_len` scalars in row-major time-by-channel order;
 * `logits` receives `addnet_model_output_len` values.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum AddnetStatus addnet_model_predict(struct AddnetModel *model,
                                       const float *input,
                                       uintptr_t input_len,
                                       float *logits,
                                       uintptr_t logits_len);

/**
 * Like [`addnet_model_predict`] but through int8 md inference. The
 * quantized weights are built on first use and cached in the handle.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum AddnetStatus addnet_model_predict_quantized(struct AddnetModel *model,
                                                 const float *input,
                                                 uintptr_t input_len,
                                                 float *logits,
                                                 uintptr_t logits_len);

/**
 * The multiplication-free scalar product `sgn(x*y)*(|x|+|y|)`.
 */
double addnet_md_scalar(double x, double y);

/**
 * The md dot product of two equal-length vectors.
 *
 * # Safety
 * `w` and `x` must point to `len` readable floats; `out` must be valid.
 */
enum AddnetStatus addnet_md_dot(const float *w, const float *x, uintptr_t len, float *out);

/**
 * Library version as a static string.
 */
const char *addnet_version(void);

/**
 * Message of the most recent error on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *addnet_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADDNET_H */
