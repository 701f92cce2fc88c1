#ifndef EYEHEAD_H
#define EYEHEAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum EhModelKind {
  EH_MODEL_KIND_LINEAR = 0,
  EH_MODEL_KIND_HINGE = 1,
  EH_MODEL_KIND_SOFT_HINGE = 2,
} EhModelKind;

/**
 * Result of a fallible call.
 */
typedef enum EhStatus {
  EH_STATUS_OK = 0,
  EH_STATUS_NULL_POINTER = 1,
  EH_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A curve was evaluated outside its domain.
   */
  EH_STATUS_MODEL = 3,
  /**
   * Fitting failed, e.g. too few points.
   */
  EH_STATUS_FIT = 4,
  EH_STATUS_TOO_FEW_CURVES = 5,
  EH_STATUS_GRID_MISMATCH = 6,
  /**
   * Any other spectrum failure.
   */
  EH_STATUS_FPCA = 7,
  /**
   * Output buffer too small; the needed length was still written.
   */
  EH_STATUS_BUFFER_TOO_SMALL = 8,
  EH_STATUS_PANIC = 9,
} EhStatus;

/**
 * A fitted curve for one participant.
 */
typedef struct EhFit EhFit;

/**
 * A fitted functional PCA.
 */
typedef struct EhSpectrum EhSpectrum;

/**
 * Fit options. Zero fields fall back to the library defaults.
 */
typedef struct EhFitOptions {
  uint64_t seed;
  size_t n_starts;
  size_t max_iters;
} EhFitOptions;

/**
 * Goodness of fit. `r2` is NaN when the observations have no variance.
 */
typedef struct EhFitSummary {
  enum EhModelKind kind;
  double sse;
  double r2;
  double rmse;
  double aic;
  size_t n_points;
  size_t n_params;
  bool converged;
  size_t iterations;
} EhFitSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *eh_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *eh_version(void);

/**
 * Overflow-safe `ln(1 + e^z)`.
 */
double eh_softplus(double z);

/**
 * Number of points on the eccentricity grid used by spectra.
 */
size_t eh_grid_len(void);

/**
 * Evaluates `beta * softplus((x - tau) / s)`.
 *
 * # Safety
 * `out` must be null or point to a writable `double`.
 */
enum EhStatus eh_soft_hinge_eval(double beta, double tau, double s, double x, double *out);

/**
 * Fits one model to `n` points `(x[i], y[i])`. `options` may be null.
 *
 * # Safety
 * `x` and `y` must each hold `n` doubles; `out` must point to a writable
 * handle slot. The handle is released with [`eh_fit_free`].
 */
enum EhStatus eh_fit(const double *x,
                     const double *y,
                     size_t n,
                     enum EhModelKind kind,
                     const struct EhFitOptions *options,
                     struct EhFit **out);

/**
 * Fitted parameters: `(alpha, gamma)` for linear, `(beta, tau)` for hinge
 * and `(beta, tau, s)` for the soft hinge.
 *
 * # Safety
 * `fit` must be a live handle; `out` must hold `cap` doubles.
 */
enum EhStatus eh_fit_params(const struct EhFit *fit, double *out, size_t cap, size_t *len_out);

/**
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum EhStatus eh_fit_summary(const struct EhFit *fit, struct EhFitSummary *out);

/**
 * Evaluates a fitted curve at `x`.
 *
 * # Safety
 * `fit` must be a live handle and `out` writable.
 */
enum EhStatus eh_fit_eval(const struct EhFit *fit, double x, double *out);

/**
 * # Safety
 * `fit` must be null or a handle from [`eh_fit`] not yet freed.
 */
void eh_fit_free(struct EhFit *fit);

/**
 * Fits a spectrum to `n_curves` soft hinges given row-wise as
 * `(beta, tau, s)` triples.
 *
 * # Safety
 * `params` must hold `3 * n_curves` doubles; `out` must point to a writable
 * handle slot. The handle is released with [`eh_spectrum_free`].
 */
enum EhStatus eh_spectrum_fit(const double *params,
                              size_t n_curves,
                              size_t n_components,
                              struct EhSpectrum **out);

/**
 * # Safety
 * `spectrum` must be null or a live handle.
 */
size_t eh_spectrum_n_components(const struct EhSpectrum *spectrum);

/**
 * Retained eigenvalues, largest first.
 *
 * # Safety
 * `spectrum` must be a live handle; `out` must hold `cap` doubles.
 */
enum EhStatus eh_spectrum_eigenvalues(const struct EhSpectrum *spectrum,
                                      double *out,
                                      size_t cap,
                                      size_t *len_out);

/**
 * Fraction of total variance carried by each retained component.
 *
 * # Safety
 * As for [`eh_spectrum_eigenvalues`].
 */
enum EhStatus eh_spectrum_explained(const struct EhSpectrum *spectrum,
                                    double *out,
                                    size_t cap,
                                    size_t *len_out);

/**
 * Mean curve on the grid.
 *
 * # Safety
 * As for [`eh_spectrum_eigenvalues`].
 */
enum EhStatus eh_spectrum_mean(const struct EhSpectrum *spectrum,
                               double *out,
                               size_t cap,
                               size_t *len_out);

/**
 * Loading of component `index` on the grid.
 *
 * # Safety
 * As for [`eh_spectrum_eigenvalues`].
 */
enum EhStatus eh_spectrum_component(const struct EhSpectrum *spectrum,
                                    size_t index,
                                    double *out,
                                    size_t cap,
                                    size_t *len_out);

/**
 * Scores a curve sampled on the grid. Writes one score per retained
 * component and, if `percentile_out` is not null, the PC1 percentile among
 * the training curves.
 *
 * # Safety
 * `curve` must hold `len` doubles, `scores_out` `cap` doubles.
 */
enum EhStatus eh_spectrum_project(const struct EhSpectrum *spectrum,
                                  const double *curve,
                                  size_t len,
                                  double *scores_out,
                                  size_t cap,
                                  double *percentile_out);

/**
 * # Safety
 * `spectrum` must be null or a handle from [`eh_spectrum_fit`] not yet freed.
 */
void eh_spectrum_free(struct EhSpectrum *spectrum);

/**
 * Percentile rank of `score` among `n` reference scores, in [0, 100].
 * Ties take the middle of their rank range.
 *
 * # Safety
 * `reference` must hold `n` doubles and `out` be writable.
 */
enum EhStatus eh_percentile(double score, const double *reference, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EYEHEAD_H */
