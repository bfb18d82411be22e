#ifndef CMPA_H
#define CMPA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every cmpa FFI call.
 */
typedef enum CmpaStatus {
  CmpaStatus_Ok = 0,
  CmpaStatus_NullPointer = 1,
  CmpaStatus_InvalidArgument = 2,
  CmpaStatus_IoError = 3,
  CmpaStatus_RuntimeError = 4,
} CmpaStatus;

/**
 * Margin selection for the batch contrastive loss.
 */
typedef enum CmpaMarginMode {
  CmpaMarginMode_Fixed = 0,
  CmpaMarginMode_Variable = 1,
} CmpaMarginMode;

/**
 * Opaque trained model handle.
 */
typedef struct CmpaModel CmpaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing cmpa call on the same thread.
 */
const char *cmpa_last_error_message(void);

/**
 * Convert a frequency in Hz to normalized MIDI pitch in [0, 1];
 * 0 Hz (unvoiced) maps to exactly 0.
 * # Safety
 * `out` must be valid for writing one f64.
 */
enum CmpaStatus cmpa_hz_to_normalized_midi(double freq_hz, double *out);

/**
 * Bin index of a rating in [0, 1] among `bins` equal-width bins.
 * # Safety
 * `out` must be valid for writing one u32.
 */
enum CmpaStatus cmpa_assign_bin(double rating, uint32_t bins, uint32_t *out);

/**
 * Max-margin contrastive loss of one pair given its latent distance.
 * # Safety
 * `out` must be valid for writing one f64.
 */
enum CmpaStatus cmpa_contrastive_pair_loss(double distance,
                                           bool same_bin,
                                           double margin,
                                           double *out);

/**
 * Variable margin |bin_a - bin_b| * s.
 * # Safety
 * `out` must be valid for writing one f64.
 */
enum CmpaStatus cmpa_variable_margin(uint32_t bin_a, uint32_t bin_b, double s, double *out);

/**
 * Mean squared error between two vectors of length n.
 * # Safety
 * `predictions` and `targets` must point to `n` readable f64 values; `out` must be valid for writing one f64.
 */
enum CmpaStatus cmpa_mse_loss(const double *predictions,
                              const double *targets,
                              size_t n,
                              double *out);

/**
 * Weighted contrastive loss over `n_pairs` latent pairs. `latents_a` and
 * `latents_b` are row-major n_pairs x dim buffers; `bins_a`/`bins_b` hold
 * the rating-bin index of each pair member.
 * # Safety
 * `latents_a`/`latents_b` must hold `n_pairs * dim` readable f64 values, `bins_a`/`bins_b` `n_pairs` readable u32 values; `out` must be valid for writing one f64.
 */
enum CmpaStatus cmpa_weighted_contrastive_batch_loss(const double *latents_a,
                                                     const double *latents_b,
                                                     size_t n_pairs,
                                                     size_t dim,
                                                     const uint32_t *bins_a,
                                                     const uint32_t *bins_b,
                                                     uint32_t n_bins,
                                                     double margin_s,
                                                     enum CmpaMarginMode mode,
                                                     double *out);

/**
 * Coefficient of determination of predictions against ground truth.
 * # Safety
 * `y_true` and `y_pred` must point to `n` readable f64 values; `out` must be valid for writing one f64.
 */
enum CmpaStatus cmpa_r_squared(const double *y_true,
                               const double *y_pred,
                               size_t n,
                               double *out);

/**
 * Davies-Bouldin index of a labeled latent set. `latents` is row-major
 * n x dim; `ratings` are in [0, 1] and are binned into `n_bins` classes.
 * # Safety
 * `latents` must hold `n * dim` readable f64 values, `ratings` `n` readable f64 values; `out` must be valid for writing one f64.
 */
enum CmpaStatus cmpa_davies_bouldin(const double *latents,
                                    size_t n,
                                    size_t dim,
                                    const double *ratings,
                                    uint32_t n_bins,
                                    double *out);

/**
 * Load a model from a checkpoint file. The handle must be released with
 * [`cmpa_model_free`].
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writing one pointer.
 */
enum CmpaStatus cmpa_model_load(const char *path, struct CmpaModel **out);

/**
 * Release a model handle. Passing null is a no-op.
 * # Safety
 * `model` must be null or a pointer obtained from [`cmpa_model_load`] that has not been freed.
 */
void cmpa_model_free(struct CmpaModel *model);

/**
 * Latent vector dimension of a loaded model.
 * # Safety
 * `model` must be a live handle from [`cmpa_model_load`]; `out` must be valid for writing one usize.
 */
enum CmpaStatus cmpa_model_latent_dim(const struct CmpaModel *model,
                                      size_t *out);

/**
 * Required input chunk length of a loaded model.
 * # Safety
 * `model` must be a live handle from [`cmpa_model_load`]; `out` must be valid for writing one usize.
 */
enum CmpaStatus cmpa_model_input_len(const struct CmpaModel *model,
                                     size_t *out);

/**
 * Run one chunk of normalized pitch values through the model. `values`
 * must hold `cmpa_model_input_len` samples in [0, 1]. `latent_out`, when
 * non-null, receives `cmpa_model_latent_dim` values; `rating_out`, when
 * non-null, receives the predicted rating in (0, 1).
 * # Safety
 * `model` must be a live handle; `values` must hold `n_values` readable f64 values; `latent_out`, when non-null, must be writable for the model's latent dimension; `rating_out`, when non-null, for one f64.
 */
enum CmpaStatus cmpa_model_forward(const struct CmpaModel *model,
                                   const double *values,
                                   size_t n_values,
                                   double *latent_out,
                                   double *rating_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CMPA_H */
