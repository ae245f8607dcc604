#ifndef PBA_H
#define PBA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PbaBasis {
  PBA_BASIS_CONSTANT = 0,
  // Constant plus one linear term per input.
  PBA_BASIS_LINEAR = 1,
} PbaBasis;

// Correlation family selector for [`pba_emulator_fit`].
typedef enum PbaCorrelation {
  // Uses the `exponent` argument, in (0, 2].
  PBA_CORRELATION_POWER_EXPONENTIAL = 0,
  PBA_CORRELATION_MATERN32 = 1,
  PBA_CORRELATION_MATERN52 = 2,
} PbaCorrelation;

typedef enum PbaStatus {
  PBA_STATUS_OK = 0,
  PBA_STATUS_NULL_POINTER = 1,
  PBA_STATUS_INVALID_ARGUMENT = 2,
  PBA_STATUS_SPECIFICATION = 3,
  PBA_STATUS_DEGENERATE = 4,
  PBA_STATUS_ESTIMATION = 5,
  PBA_STATUS_EMULATOR = 6,
  PBA_STATUS_CALIBRATION = 7,
  PBA_STATUS_CONFIG = 8,
  PBA_STATUS_IO = 9,
  PBA_STATUS_PANIC = 10,
} PbaStatus;

// Result of a posterior belief assessment.
typedef struct PbaAssessment PbaAssessment;

// Fitted Gaussian-process emulator.
typedef struct PbaEmulator PbaEmulator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null if none. The pointer is
// valid until the next failing call on this thread.
const char *pba_last_error_message(void);

// Bayes linear adjustment of `B` (dimension `nb`) by data `D` (dimension `nd`).
//
// `var_b` is `nb x nb`, `var_d` is `nd x nd` and `cov_bd` is `nb x nd`.
// Writes `nb` values to `out_mean` and, when `out_variance` is not null,
// `nb x nb` values to `out_variance`.
//
// # Safety
// Every input pointer must reference the stated number of readable values and
// the outputs the stated number of writable values.
enum PbaStatus pba_adjust(size_t nb,
                          size_t nd,
                          const double *e_b,
                          const double *var_b,
                          const double *e_d,
                          const double *var_d,
                          const double *cov_bd,
                          const double *observed_d,
                          double *out_mean,
                          double *out_variance);

// Fits an emulator to `n` runs at `r`-dimensional inputs in `[0, 1]`
// (`points` is `n x r`) with the correlation hyperparameters given.
//
// # Safety
// `points` must hold `n * r` values, `y` `n` values and `kappa` `r` values.
// `out` must be a valid pointer to a handle slot.
enum PbaStatus pba_emulator_fit(size_t n,
                                size_t r,
                                const double *points,
                                const double *y,
                                enum PbaBasis basis,
                                enum PbaCorrelation family,
                                double exponent,
                                const double *kappa,
                                double nugget,
                                struct PbaEmulator **out);

// Predictive mean and variance at one input `x` of the emulator's dimension.
//
// # Safety
// `handle` must come from [`pba_emulator_fit`]; `x` must hold as many values
// as the fitted inputs have dimensions.
enum PbaStatus pba_emulator_predict(const struct PbaEmulator *handle,
                                    const double *x,
                                    double *out_mean,
                                    double *out_variance);

// Input dimension of a fitted emulator, 0 for a null handle.
//
// # Safety
// `handle` must be null or come from [`pba_emulator_fit`].
size_t pba_emulator_dims(const struct PbaEmulator *handle);

// # Safety
// `handle` must be null or come from [`pba_emulator_fit`] and not be freed twice.
void pba_emulator_free(struct PbaEmulator *handle);

// Posterior belief assessment from already estimated moments of `(y, G)`.
//
// `y` has dimension `ny`; `G` has `ng` entries made of `ng / ny` blocks, the
// baseline analysis first. `var_y` is `ny x ny`, `var_g` is `ng x ng`,
// `cov_y_g` is `ny x ng`; `observed_g` holds `ng` values.
//
// # Safety
// Every pointer must reference the stated number of readable values and `out`
// must be a valid pointer to a handle slot.
enum PbaStatus pba_assessment_from_moments(size_t ny,
                                           size_t ng,
                                           const double *e_y,
                                           const double *var_y,
                                           const double *e_g,
                                           const double *var_g,
                                           const double *cov_y_g,
                                           const double *observed_g,
                                           size_t replicates,
                                           struct PbaAssessment **out);

// Dimension of `y` in an assessment, 0 for a null handle.
//
// # Safety
// `handle` must be null or a live assessment handle.
size_t pba_assessment_y_dim(const struct PbaAssessment *handle);

// Number of entries of `G` in an assessment, 0 for a null handle.
//
// # Safety
// `handle` must be null or a live assessment handle.
size_t pba_assessment_g_dim(const struct PbaAssessment *handle);

// Writes `E_G[y]` (`ny` values).
//
// # Safety
// `handle` must be a live assessment handle and `out` hold `ny` writable values.
enum PbaStatus pba_assessment_e_gy(const struct PbaAssessment *handle, double *out);

// Writes the adjusted variance (`ny x ny`).
//
// # Safety
// `handle` must be a live assessment handle and `out` hold `ny * ny` writable values.
enum PbaStatus pba_assessment_adjusted_variance(const struct PbaAssessment *handle, double *out);

// Writes the coefficients on `G` (`ny x ng`).
//
// # Safety
// `handle` must be a live assessment handle and `out` hold `ny * ng` writable values.
enum PbaStatus pba_assessment_coefficients(const struct PbaAssessment *handle, double *out);

// Writes the intercept (`ny` values).
//
// # Safety
// `handle` must be a live assessment handle and `out` hold `ny` writable values.
enum PbaStatus pba_assessment_intercept(const struct PbaAssessment *handle, double *out);

// Writes the resolution lower bound (`ny` values in `[0, 1]`).
//
// # Safety
// `handle` must be a live assessment handle and `out` hold `ny` writable values.
enum PbaStatus pba_assessment_resolution_lower_bound(const struct PbaAssessment *handle,
                                                     double *out);

// # Safety
// `handle` must be null or a live assessment handle, not freed twice.
void pba_assessment_free(struct PbaAssessment *handle);

// Runs the full assessment described by a TOML config, as `pba run-pba`
// does. When `output_dir` is not null it replaces the configured directory.
// On success `*out` (if not null) receives the assessment handle.
//
// # Safety
// `config_path` must be a NUL-terminated string; `output_dir` null or a
// NUL-terminated string; `out` null or a valid pointer to a handle slot.
enum PbaStatus pba_run_config(const char *config_path,
                              const char *output_dir,
                              struct PbaAssessment **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PBA_H */
