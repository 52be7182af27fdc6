/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PAD_H
#define PAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. The non-zero values match the `pad` CLI exit codes where
// the causes coincide.
typedef enum PadStatus {
  PAD_STATUS_OK = 0,
  // Invalid configuration or checkpoint contents.
  PAD_STATUS_CONFIG = 2,
  // Malformed input data, I/O failure, or out-of-domain argument.
  PAD_STATUS_INPUT = 3,
  // Non-finite values during integration.
  PAD_STATUS_NUMERIC = 4,
  // A required pointer argument was null.
  PAD_STATUS_NULL_ARGUMENT = 6,
  // Internal panic caught at the boundary.
  PAD_STATUS_PANIC = 7,
} PadStatus;

// Trained network with its normalization statistics.
typedef struct PadModel PadModel;

// Natural cubic spline through one window's observations.
typedef struct PadSpline PadSpline;

// Window-level detection metrics.
typedef struct PadMetrics {
  double precision;
  double recall;
  double f1;
  size_t tp;
  size_t fp;
  size_t tn;
  size_t fn_;
} PadMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pad_version(void);

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next `pad_*` call on the same thread.
const char *pad_last_error_message(void);

// Load a checkpoint written by `pad train`.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
// On success `*out` owns a model to be released with [`pad_model_free`].
enum PadStatus pad_model_load(const char *path, struct PadModel **out);

// Number of data channels the model expects.
//
// # Safety
// `model` must be null or a live handle from [`pad_model_load`].
size_t pad_model_n_channels(const struct PadModel *model);

// Score one window of raw (unnormalized) observations.
//
// `times` holds `n_obs` strictly increasing timestamps and `values` the
// row-major `n_obs × n_channels` observations. The checkpoint's
// normalization is applied before the forward pass.
//
// # Safety
// Pointers must be valid for the stated lengths; `model` must be live.
enum PadStatus pad_model_predict(const struct PadModel *model,
                                 const double *times,
                                 const double *values,
                                 size_t n_obs,
                                 size_t n_channels,
                                 double *out_p_anomaly,
                                 double *out_p_poa);

// # Safety
// `model` must be null or a handle from [`pad_model_load`] not yet freed.
void pad_model_free(struct PadModel *model);

// Fit a natural cubic spline through `n_obs` observations.
//
// # Safety
// Pointers must be valid for the stated lengths. On success `*out` owns a
// spline to be released with [`pad_spline_free`].
enum PadStatus pad_spline_fit(const double *times,
                              const double *values,
                              size_t n_obs,
                              size_t n_channels,
                              struct PadSpline **out);

// # Safety
// `spline` must be null or a live handle.
size_t pad_spline_n_channels(const struct PadSpline *spline);

// Write `X(t)` (one value per channel) to `out`.
//
// # Safety
// `out` must have room for `pad_spline_n_channels(spline)` values.
enum PadStatus pad_spline_eval(const struct PadSpline *spline, double t, double *out);

// Write `dX/dt` at `t` to `out`.
//
// # Safety
// `out` must have room for `pad_spline_n_channels(spline)` values.
enum PadStatus pad_spline_derivative(const struct PadSpline *spline, double t, double *out);

// # Safety
// `spline` must be null or a handle from [`pad_spline_fit`] not yet freed.
void pad_spline_free(struct PadSpline *spline);

// Precision, recall, F1 and confusion counts of `n` scored windows.
// A window is predicted positive when its probability is `>= threshold`.
//
// # Safety
// `probs` and `labels` must hold `n` values; `out` must be valid.
enum PadStatus pad_metrics_evaluate(const double *probs,
                                    const uint8_t *labels,
                                    size_t n,
                                    double threshold,
                                    struct PadMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAD_H */
