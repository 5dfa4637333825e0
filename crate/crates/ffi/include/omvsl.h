#ifndef OMVSL_H
#define OMVSL_H

/* This header is generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every fallible call.
 */
typedef enum OmvslStatus {
  OMVSL_STATUS_OK = 0,
  OMVSL_STATUS_NULL_POINTER = 1,
  OMVSL_STATUS_INVALID_ARGUMENT = 2,
  OMVSL_STATUS_NUMERICAL_ERROR = 3,
  OMVSL_STATUS_IO_ERROR = 4,
  OMVSL_STATUS_UTF8_ERROR = 5,
} OmvslStatus;

/*
 Label matrix interpretation.
 */
typedef enum OmvslLabelKind {
  OMVSL_LABEL_KIND_MULTICLASS_ONEHOT = 0,
  OMVSL_LABEL_KIND_MULTILABEL = 1,
} OmvslLabelKind;

/*
 Model kinds, mirroring the library catalog.
 */
typedef enum OmvslModelKind {
  OMVSL_MODEL_KIND_OGMA = 0,
  OMVSL_MODEL_KIND_OMLDA = 1,
  OMVSL_MODEL_KIND_OMVMDA = 2,
  OMVSL_MODEL_KIND_OM2CCA = 3,
  OMVSL_MODEL_KIND_OMCCA = 4,
  OMVSL_MODEL_KIND_OHSIC = 5,
  OMVSL_MODEL_KIND_GEV_GMA = 6,
  OMVSL_MODEL_KIND_GEV_MLDA = 7,
  OMVSL_MODEL_KIND_GEV_MVMDA = 8,
  OMVSL_MODEL_KIND_GEV_MCCA = 9,
  OMVSL_MODEL_KIND_HSIC_GEV = 10,
} OmvslModelKind;

/*
 Opaque dataset builder.
 */
typedef struct OmvslDataset OmvslDataset;

/*
 Opaque fitted model.
 */
typedef struct OmvslModel OmvslModel;

/*
 Fit parameters; initialize with [`omvsl_fit_options_init`].
 */
typedef struct OmvslFitOptions {
  enum OmvslModelKind kind;
  double alpha;
  double epsilon;
  uintptr_t k;
  uintptr_t krylov_order;
  double tol;
  uintptr_t max_iters;
  double guard_tol;
  uint64_t seed;
  /*
   Nonzero: fill degenerate view columns deterministically instead of
   failing.
   */
  uint8_t degenerate_fill;
} OmvslFitOptions;

/*
 Solver parameters of the standalone eigensolver entry point.
 */
typedef struct OmvslSolverOptions {
  uintptr_t krylov_order;
  double tol;
  uintptr_t max_iters;
  double guard_tol;
  uint64_t seed;
} OmvslSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static C string.
 */
const char *omvsl_version(void);

/*
 Message of the most recent failure on this thread. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *omvsl_last_error(void);

/*
 Allocate an empty dataset builder; free with [`omvsl_dataset_free`].
 */
struct OmvslDataset *omvsl_dataset_new(void);

/*
 Release a dataset builder. A null pointer is ignored.

 # Safety
 `ds` must be a pointer returned by [`omvsl_dataset_new`] that has not
 been freed.
 */
void omvsl_dataset_free(struct OmvslDataset *ds);

/*
 Append one view: `n_samples x n_features` values in row-major order.

 # Safety
 `data` must point to `n_samples * n_features` readable doubles and `ds`
 must be a live dataset handle.
 */
enum OmvslStatus omvsl_dataset_add_view(struct OmvslDataset *ds,
                                        const double *data,
                                        uintptr_t n_samples,
                                        uintptr_t n_features);

/*
 Attach labels: `n_samples x n_labels` binary values in row-major order.

 # Safety
 `data` must point to `n_samples * n_labels` readable doubles and `ds`
 must be a live dataset handle.
 */
enum OmvslStatus omvsl_dataset_set_labels(struct OmvslDataset *ds,
                                          const double *data,
                                          uintptr_t n_samples,
                                          uintptr_t n_labels,
                                          enum OmvslLabelKind kind);

/*
 Fill fit options with the library defaults (omlda, alpha 1, eps 1e-8,
 k 10, the standard solver settings, seed 0).

 # Safety
 `opts` must point to writable memory for one `OmvslFitOptions`.
 */
enum OmvslStatus omvsl_fit_options_init(struct OmvslFitOptions *opts);

/*
 Fit a model on the dataset; on success `*out` owns a new model handle.

 # Safety
 `ds` and `opts` must be live pointers and `out` must point to writable
 pointer storage.
 */
enum OmvslStatus omvsl_fit(const struct OmvslDataset *ds,
                           const struct OmvslFitOptions *opts,
                           struct OmvslModel **out);

/*
 Release a model handle. A null pointer is ignored.

 # Safety
 `model` must be a pointer produced by this library that has not been
 freed.
 */
void omvsl_model_free(struct OmvslModel *model);

/*
 Number of projection matrices, label view included when present.

 # Safety
 `model` must be a live model handle.
 */
uintptr_t omvsl_model_num_views(const struct OmvslModel *model);

/*
 Projection column count per view.

 # Safety
 `model` must be a live model handle.
 */
uintptr_t omvsl_model_k(const struct OmvslModel *model);

/*
 Nonzero when the model appended the labels as an extra view.

 # Safety
 `model` must be a live model handle.
 */
uint8_t omvsl_model_has_label_view(const struct OmvslModel *model);

/*
 Feature dimension of one view's projection matrix.

 # Safety
 `model` must be a live model handle and `rows` writable.
 */
enum OmvslStatus omvsl_model_view_rows(const struct OmvslModel *model,
                                       uintptr_t view,
                                       uintptr_t *rows);

/*
 Copy one view's projection matrix into `out`, row-major `rows x k`.
 `len` must equal `rows * k`.

 # Safety
 `model` must be a live model handle and `out` must point to `len`
 writable doubles.
 */
enum OmvslStatus omvsl_model_projection(const struct OmvslModel *model,
                                        uintptr_t view,
                                        double *out,
                                        uintptr_t len);

/*
 Copy the per-column eigenvalue history. `len` must equal `k`.

 # Safety
 `model` must be a live model handle and `out` must point to `len`
 writable doubles.
 */
enum OmvslStatus omvsl_model_eigenvalues(const struct OmvslModel *model,
                                         double *out,
                                         uintptr_t len);

/*
 Trace-ratio objective value of the fitted projections.

 # Safety
 `model` must be a live model handle and `out` writable.
 */
enum OmvslStatus omvsl_model_objective(const struct OmvslModel *model, double *out);

/*
 Fuse a dataset through the model: row-major `n_samples x (v k)` output
 over the input views (a label view never contributes). `len` must equal
 `n_samples * v * k`.

 # Safety
 `model` and `ds` must be live handles and `out` must point to `len`
 writable doubles.
 */
enum OmvslStatus omvsl_transform(const struct OmvslModel *model,
                                 const struct OmvslDataset *ds,
                                 double *out,
                                 uintptr_t len);

/*
 Save the model as a projection bundle directory.

 # Safety
 `model` must be a live model handle and `dir` a NUL-terminated string.
 */
enum OmvslStatus omvsl_model_save(const struct OmvslModel *model, const char *dir);

/*
 Load a projection bundle directory into a new model handle.

 # Safety
 `dir` must be a NUL-terminated string and `out` writable pointer
 storage.
 */
enum OmvslStatus omvsl_model_load(const char *dir, struct OmvslModel **out);

/*
 Top eigenpair of the dense symmetric pencil `(A, B)`; both matrices are
 `dim x dim` row-major, `B` positive semi-definite. Writes the eigenvalue
 to `rho` and, when `x` is non-null, the unit eigenvector to `x[0..dim]`.

 # Safety
 `a` and `b` must point to `dim * dim` readable doubles, `rho` must be
 writable, and `x` must be null or point to `dim` writable doubles.
 */
enum OmvslStatus omvsl_solve_eig_dense(const double *a,
                                       const double *b,
                                       uintptr_t dim,
                                       const struct OmvslSolverOptions *opts,
                                       double *rho,
                                       double *x);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OMVSL_H */
