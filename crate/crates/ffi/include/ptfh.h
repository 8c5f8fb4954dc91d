#ifndef PTFH_H
#define PTFH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PtfhStatus {
  PTFH_STATUS_OK = 0,
  PTFH_STATUS_DOMAIN = 1,
  PTFH_STATUS_OVERFLOW = 2,
  PTFH_STATUS_ROW = 3,
  PTFH_STATUS_DATA = 4,
  PTFH_STATUS_RANK_DEFICIENT = 5,
  PTFH_STATUS_NUMERICAL = 6,
  PTFH_STATUS_CONFIG = 7,
  PTFH_STATUS_IO = 8,
  PTFH_STATUS_NULL_POINTER = 9,
  PTFH_STATUS_BUFFER_TOO_SMALL = 10,
  PTFH_STATUS_PANIC = 11,
} PtfhStatus;

typedef enum PtfhModel {
  PTFH_MODEL_PTFH = 0,
  PTFH_MODEL_LOGFH = 1,
  PTFH_MODEL_FH = 2,
} PtfhModel;

typedef enum PtfhCorrection {
  PTFH_CORRECTION_ADDITIVE = 0,
  PTFH_CORRECTION_MULTIPLICATIVE = 1,
} PtfhCorrection;

/*
 Area-level data set.
 */
typedef struct PtfhDataset PtfhDataset;

/*
 Fitted model.
 */
typedef struct PtfhFit PtfhFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL terminated,
 truncated to `len - 1` bytes) and returns the full message length.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
uintptr_t ptfh_last_error_message(char *buf, uintptr_t len);

/*
 Dual power transform of `x > 0`.

 # Safety
 `out` must point to a writable double.
 */
enum PtfhStatus ptfh_dpt(double x, double lambda, double *out);

/*
 Inverse dual power transform.

 # Safety
 `out` must point to a writable double.
 */
enum PtfhStatus ptfh_dpt_inv(double t, double lambda, double *out);

/*
 Builds a data set from `m` areas with known sampling variances.
 `x` is row-major `m × p` without the intercept, which is prepended.

 # Safety
 `y` and `d` must hold `m` doubles, `x` must hold `m * p` doubles and
 `out` must point to a writable handle slot.
 */
enum PtfhStatus ptfh_dataset_new(uintptr_t m,
                                 uintptr_t p,
                                 const double *y,
                                 const double *x,
                                 const double *d,
                                 struct PtfhDataset **out);

/*
 Reads a data set from a CSV file in the CLI's input format.

 # Safety
 `path` must be a NUL-terminated UTF-8 string and `out` a writable handle slot.
 */
enum PtfhStatus ptfh_dataset_from_csv(const char *path, struct PtfhDataset **out);

/*
 Number of areas, 0 for a null handle.

 # Safety
 `ds` must be null or a live handle.
 */
uintptr_t ptfh_dataset_len(const struct PtfhDataset *ds);

/*
 # Safety
 `ds` must be null or a handle not yet freed.
 */
void ptfh_dataset_free(struct PtfhDataset *ds);

/*
 Fits a model by maximum likelihood. `lambda_max <= 0` selects the default range.

 # Safety
 `ds` must be a live handle and `out` a writable handle slot.
 */
enum PtfhStatus ptfh_fit(const struct PtfhDataset *ds,
                         enum PtfhModel model,
                         double lambda_max,
                         struct PtfhFit **out);

/*
 # Safety
 `fit` must be null or a handle not yet freed.
 */
void ptfh_fit_free(struct PtfhFit *fit);

/*
 Estimated λ (0 for log-FH, NaN for FH or a null handle).

 # Safety
 `fit` must be null or a live handle.
 */
double ptfh_fit_lambda(const struct PtfhFit *fit);

/*
 Estimated random-effect variance A (NaN for a null handle).

 # Safety
 `fit` must be null or a live handle.
 */
double ptfh_fit_a(const struct PtfhFit *fit);

/*
 Maximized log-likelihood (NaN for a null handle).

 # Safety
 `fit` must be null or a live handle.
 */
double ptfh_fit_loglik(const struct PtfhFit *fit);

/*
 Copies β (intercept first) into `out`; `*n_beta` receives its length.

 # Safety
 `fit` must be a live handle, `out` must hold `len` doubles and `n_beta`
 must be writable.
 */
enum PtfhStatus ptfh_fit_beta(const struct PtfhFit *fit,
                              double *out,
                              uintptr_t len,
                              uintptr_t *n_beta);

/*
 Empirical best predictions of the area means, written to `out[0..m]`.
 `quad_order == 0` selects the default order.

 # Safety
 `ds` and `fit` must be live handles and `out` must hold `len` doubles.
 */
enum PtfhStatus ptfh_predict(const struct PtfhDataset *ds,
                             const struct PtfhFit *fit,
                             uintptr_t quad_order,
                             double *out,
                             uintptr_t len);

/*
 Parametric bootstrap MSE of the predictions, written to `out[0..m]`.
 `b` replicates and `s` Monte-Carlo draws; zero selects the defaults.
 Returns `PTFH_STATUS_NUMERICAL` if too many bootstrap refits failed.

 # Safety
 `ds` and `fit` must be live handles and `out` must hold `len` doubles.
 */
enum PtfhStatus ptfh_mse(const struct PtfhDataset *ds,
                         const struct PtfhFit *fit,
                         uintptr_t b,
                         uintptr_t s,
                         uint64_t seed,
                         enum PtfhCorrection correction,
                         double *out,
                         uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PTFH_H */
