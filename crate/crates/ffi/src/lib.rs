//! C ABI for the multi-view subspace learning library.
//!
//! The interface works on two opaque handles: a dataset builder that
//! collects per-view feature matrices (row-major, one sample per row), and
//! a fitted model holding per-view projection matrices. Every fallible call
//! returns a status code; the message of the most recent failure on the
//! calling thread is available from [`omvsl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use omvsl::eigsolve::{loecg, Pencil, SolverConfig};
use omvsl::error::Error;
use omvsl::eval::project_fuse;
use omvsl::io::{load_bundle, save_bundle, Bundle, BundleMeta, BundleView};
use omvsl::linop::{BlockLayout, DenseSymOp};
use omvsl::models::{LabelKind, ModelKind, ModelSpec, MultiViewDataset};
use omvsl::osave::DegeneracyPolicy;
use omvsl::pipeline::fit_model;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmvslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericalError = 3,
    IoError = 4,
    Utf8Error = 5,
}

fn status_of(err: &Error) -> OmvslStatus {
    match err {
        Error::Io { .. } | Error::Parse { .. } | Error::Manifest(_) => OmvslStatus::IoError,
        e if e.is_input_error() => OmvslStatus::InvalidArgument,
        _ => OmvslStatus::NumericalError,
    }
}

fn fail(err: &Error) -> OmvslStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn fail_msg(status: OmvslStatus, msg: &str) -> OmvslStatus {
    set_error(msg);
    status
}

/// Model kinds, mirroring the library catalog.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmvslModelKind {
    Ogma = 0,
    Omlda = 1,
    Omvmda = 2,
    Om2cca = 3,
    Omcca = 4,
    Ohsic = 5,
    GevGma = 6,
    GevMlda = 7,
    GevMvmda = 8,
    GevMcca = 9,
    HsicGev = 10,
}

impl From<OmvslModelKind> for ModelKind {
    fn from(k: OmvslModelKind) -> ModelKind {
        match k {
            OmvslModelKind::Ogma => ModelKind::Ogma,
            OmvslModelKind::Omlda => ModelKind::Omlda,
            OmvslModelKind::Omvmda => ModelKind::Omvmda,
            OmvslModelKind::Om2cca => ModelKind::Om2cca,
            OmvslModelKind::Omcca => ModelKind::Omcca,
            OmvslModelKind::Ohsic => ModelKind::Ohsic,
            OmvslModelKind::GevGma => ModelKind::GevGma,
            OmvslModelKind::GevMlda => ModelKind::GevMlda,
            OmvslModelKind::GevMvmda => ModelKind::GevMvmda,
            OmvslModelKind::GevMcca => ModelKind::GevMcca,
            OmvslModelKind::HsicGev => ModelKind::HsicGev,
        }
    }
}

/// Label matrix interpretation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmvslLabelKind {
    MulticlassOnehot = 0,
    Multilabel = 1,
}

/// Fit parameters; initialize with [`omvsl_fit_options_init`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OmvslFitOptions {
    pub kind: OmvslModelKind,
    pub alpha: f64,
    pub epsilon: f64,
    pub k: usize,
    pub krylov_order: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub guard_tol: f64,
    pub seed: u64,
    /// Nonzero: fill degenerate view columns deterministically instead of
    /// failing.
    pub degenerate_fill: u8,
}

/// Solver parameters of the standalone eigensolver entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OmvslSolverOptions {
    pub krylov_order: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub guard_tol: f64,
    pub seed: u64,
}

/// Opaque dataset builder.
pub struct OmvslDataset {
    views: Vec<DMatrix<f64>>,
    labels: Option<(DMatrix<f64>, LabelKind)>,
}

/// Opaque fitted model.
pub struct OmvslModel {
    bundle: Bundle,
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn omvsl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn omvsl_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Allocate an empty dataset builder; free with [`omvsl_dataset_free`].
#[no_mangle]
pub extern "C" fn omvsl_dataset_new() -> *mut OmvslDataset {
    Box::into_raw(Box::new(OmvslDataset {
        views: Vec::new(),
        labels: None,
    }))
}

/// Release a dataset builder. A null pointer is ignored.
///
/// # Safety
/// `ds` must be a pointer returned by [`omvsl_dataset_new`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn omvsl_dataset_free(ds: *mut OmvslDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Append one view: `n_samples x n_features` values in row-major order.
///
/// # Safety
/// `data` must point to `n_samples * n_features` readable doubles and `ds`
/// must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn omvsl_dataset_add_view(
    ds: *mut OmvslDataset,
    data: *const f64,
    n_samples: usize,
    n_features: usize,
) -> OmvslStatus {
    let Some(ds) = ds.as_mut() else {
        return fail_msg(OmvslStatus::NullPointer, "dataset handle is null");
    };
    if data.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "view data pointer is null");
    }
    if n_samples == 0 || n_features == 0 {
        return fail_msg(
            OmvslStatus::InvalidArgument,
            "view needs positive sample and feature counts",
        );
    }
    let slice = std::slice::from_raw_parts(data, n_samples * n_features);
    // Row-major samples-by-features becomes features-by-samples.
    let view = DMatrix::from_fn(n_features, n_samples, |f, s| slice[s * n_features + f]);
    ds.views.push(view);
    OmvslStatus::Ok
}

/// Attach labels: `n_samples x n_labels` binary values in row-major order.
///
/// # Safety
/// `data` must point to `n_samples * n_labels` readable doubles and `ds`
/// must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn omvsl_dataset_set_labels(
    ds: *mut OmvslDataset,
    data: *const f64,
    n_samples: usize,
    n_labels: usize,
    kind: OmvslLabelKind,
) -> OmvslStatus {
    let Some(ds) = ds.as_mut() else {
        return fail_msg(OmvslStatus::NullPointer, "dataset handle is null");
    };
    if data.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "label data pointer is null");
    }
    if n_samples == 0 || n_labels == 0 {
        return fail_msg(
            OmvslStatus::InvalidArgument,
            "labels need positive sample and label counts",
        );
    }
    let slice = std::slice::from_raw_parts(data, n_samples * n_labels);
    let labels = DMatrix::from_fn(n_labels, n_samples, |l, s| slice[s * n_labels + l]);
    let kind = match kind {
        OmvslLabelKind::MulticlassOnehot => LabelKind::MulticlassOnehot,
        OmvslLabelKind::Multilabel => LabelKind::Multilabel,
    };
    ds.labels = Some((labels, kind));
    OmvslStatus::Ok
}

fn build_dataset(ds: &OmvslDataset) -> Result<MultiViewDataset, Error> {
    let (labels, kind) = match &ds.labels {
        Some((y, k)) => (Some(y.clone()), *k),
        None => (None, LabelKind::None),
    };
    MultiViewDataset::new(ds.views.clone(), labels, kind)
}

/// Fill fit options with the library defaults (omlda, alpha 1, eps 1e-8,
/// k 10, the standard solver settings, seed 0).
///
/// # Safety
/// `opts` must point to writable memory for one `OmvslFitOptions`.
#[no_mangle]
pub unsafe extern "C" fn omvsl_fit_options_init(opts: *mut OmvslFitOptions) -> OmvslStatus {
    if opts.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "options pointer is null");
    }
    opts.write(OmvslFitOptions {
        kind: OmvslModelKind::Omlda,
        alpha: 1.0,
        epsilon: 1e-8,
        k: 10,
        krylov_order: 10,
        tol: 1e-6,
        max_iters: 500,
        guard_tol: 1e-12,
        seed: 0,
        degenerate_fill: 0,
    });
    OmvslStatus::Ok
}

/// Fit a model on the dataset; on success `*out` owns a new model handle.
///
/// # Safety
/// `ds` and `opts` must be live pointers and `out` must point to writable
/// pointer storage.
#[no_mangle]
pub unsafe extern "C" fn omvsl_fit(
    ds: *const OmvslDataset,
    opts: *const OmvslFitOptions,
    out: *mut *mut OmvslModel,
) -> OmvslStatus {
    let Some(ds) = ds.as_ref() else {
        return fail_msg(OmvslStatus::NullPointer, "dataset handle is null");
    };
    let Some(opts) = opts.as_ref() else {
        return fail_msg(OmvslStatus::NullPointer, "options pointer is null");
    };
    if out.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "output pointer is null");
    }
    let dataset = match build_dataset(ds) {
        Ok(d) => d,
        Err(e) => return fail(&e),
    };
    let spec = match ModelSpec::new(opts.kind.into(), opts.alpha, opts.epsilon, opts.k) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let config = SolverConfig {
        krylov_order: opts.krylov_order,
        tol: opts.tol,
        max_iters: opts.max_iters,
        guard_tol: opts.guard_tol,
        seed: opts.seed,
    };
    let policy = if opts.degenerate_fill != 0 {
        DegeneracyPolicy::FillDeterministic
    } else {
        DegeneracyPolicy::Error
    };
    let fit = match fit_model(&dataset, &spec, &config, policy) {
        Ok(f) => f,
        Err(e) => return fail(&e),
    };
    let mut views: Vec<BundleView> = (0..dataset.num_views())
        .map(|s| BundleView {
            id: format!("view{s}"),
            rows: fit.projections.matrix(s).nrows(),
            cols: fit.projections.matrix(s).ncols(),
        })
        .collect();
    if fit.meta.has_label_view {
        let s = views.len();
        views.push(BundleView {
            id: "labels".into(),
            rows: fit.projections.matrix(s).nrows(),
            cols: fit.projections.matrix(s).ncols(),
        });
    }
    let bundle = Bundle {
        meta: BundleMeta {
            dataset: "ffi".into(),
            model: spec.kind,
            alpha: spec.alpha,
            epsilon: spec.epsilon,
            k: spec.k,
            seed: config.seed,
            krylov_order: config.krylov_order,
            tol: config.tol,
            max_iters: config.max_iters,
            guard_tol: config.guard_tol,
            orthogonal: spec.kind.is_orthogonal(),
            has_label_view: fit.meta.has_label_view,
            views,
            eigenvalues: fit.eigenvalues,
            converged: fit.converged,
            residuals: fit.residuals,
            objective_g: fit.objective_g,
            wall_clock_seconds: 0.0,
        },
        projections: fit.projections.matrices().to_vec(),
    };
    out.write(Box::into_raw(Box::new(OmvslModel { bundle })));
    OmvslStatus::Ok
}

/// Release a model handle. A null pointer is ignored.
///
/// # Safety
/// `model` must be a pointer produced by this library that has not been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_free(model: *mut OmvslModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of projection matrices, label view included when present.
///
/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_num_views(model: *const OmvslModel) -> usize {
    model.as_ref().map_or(0, |m| m.bundle.projections.len())
}

/// Projection column count per view.
///
/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_k(model: *const OmvslModel) -> usize {
    model.as_ref().map_or(0, |m| m.bundle.meta.k)
}

/// Nonzero when the model appended the labels as an extra view.
///
/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_has_label_view(model: *const OmvslModel) -> u8 {
    model
        .as_ref()
        .map_or(0, |m| m.bundle.meta.has_label_view as u8)
}

/// Feature dimension of one view's projection matrix.
///
/// # Safety
/// `model` must be a live model handle and `rows` writable.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_view_rows(
    model: *const OmvslModel,
    view: usize,
    rows: *mut usize,
) -> OmvslStatus {
    let Some(m) = model.as_ref() else {
        return fail_msg(OmvslStatus::NullPointer, "model handle is null");
    };
    if rows.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "output pointer is null");
    }
    if view >= m.bundle.projections.len() {
        return fail_msg(OmvslStatus::InvalidArgument, "view index out of range");
    }
    rows.write(m.bundle.projections[view].nrows());
    OmvslStatus::Ok
}

/// Copy one view's projection matrix into `out`, row-major `rows x k`.
/// `len` must equal `rows * k`.
///
/// # Safety
/// `model` must be a live model handle and `out` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_projection(
    model: *const OmvslModel,
    view: usize,
    out: *mut f64,
    len: usize,
) -> OmvslStatus {
    let Some(m) = model.as_ref() else {
        return fail_msg(OmvslStatus::NullPointer, "model handle is null");
    };
    if out.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "output pointer is null");
    }
    if view >= m.bundle.projections.len() {
        return fail_msg(OmvslStatus::InvalidArgument, "view index out of range");
    }
    let p = &m.bundle.projections[view];
    if len != p.len() {
        return fail_msg(
            OmvslStatus::InvalidArgument,
            "output length does not match rows * k",
        );
    }
    let out = std::slice::from_raw_parts_mut(out, len);
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            out[i * p.ncols() + j] = p[(i, j)];
        }
    }
    OmvslStatus::Ok
}

/// Copy the per-column eigenvalue history. `len` must equal `k`.
///
/// # Safety
/// `model` must be a live model handle and `out` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_eigenvalues(
    model: *const OmvslModel,
    out: *mut f64,
    len: usize,
) -> OmvslStatus {
    let Some(m) = model.as_ref() else {
        return fail_msg(OmvslStatus::NullPointer, "model handle is null");
    };
    if out.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "output pointer is null");
    }
    if len != m.bundle.meta.eigenvalues.len() {
        return fail_msg(
            OmvslStatus::InvalidArgument,
            "output length does not match the column count",
        );
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(&m.bundle.meta.eigenvalues);
    OmvslStatus::Ok
}

/// Trace-ratio objective value of the fitted projections.
///
/// # Safety
/// `model` must be a live model handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_objective(
    model: *const OmvslModel,
    out: *mut f64,
) -> OmvslStatus {
    let Some(m) = model.as_ref() else {
        return fail_msg(OmvslStatus::NullPointer, "model handle is null");
    };
    if out.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "output pointer is null");
    }
    out.write(m.bundle.meta.objective_g);
    OmvslStatus::Ok
}

/// Fuse a dataset through the model: row-major `n_samples x (v k)` output
/// over the input views (a label view never contributes). `len` must equal
/// `n_samples * v * k`.
///
/// # Safety
/// `model` and `ds` must be live handles and `out` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn omvsl_transform(
    model: *const OmvslModel,
    ds: *const OmvslDataset,
    out: *mut f64,
    len: usize,
) -> OmvslStatus {
    let Some(m) = model.as_ref() else {
        return fail_msg(OmvslStatus::NullPointer, "model handle is null");
    };
    let Some(ds) = ds.as_ref() else {
        return fail_msg(OmvslStatus::NullPointer, "dataset handle is null");
    };
    if out.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "output pointer is null");
    }
    let dataset = match build_dataset(ds) {
        Ok(d) => d,
        Err(e) => return fail(&e),
    };
    let projections = match m.bundle.input_projections() {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    let idx: Vec<usize> = (0..dataset.n()).collect();
    let fused = match project_fuse(&projections, &dataset, &idx) {
        Ok(f) => f,
        Err(e) => return fail(&e),
    };
    if len != fused.len() {
        return fail_msg(
            OmvslStatus::InvalidArgument,
            "output length does not match n_samples * views * k",
        );
    }
    let out = std::slice::from_raw_parts_mut(out, len);
    // Fused matrix is (v k) x n; emit row-major samples-by-features.
    for s in 0..fused.ncols() {
        for f in 0..fused.nrows() {
            out[s * fused.nrows() + f] = fused[(f, s)];
        }
    }
    OmvslStatus::Ok
}

unsafe fn dir_from_cstr(dir: *const c_char) -> Result<String, OmvslStatus> {
    if dir.is_null() {
        return Err(fail_msg(OmvslStatus::NullPointer, "path pointer is null"));
    }
    match CStr::from_ptr(dir).to_str() {
        Ok(s) => Ok(s.to_owned()),
        Err(_) => Err(fail_msg(OmvslStatus::Utf8Error, "path is not valid UTF-8")),
    }
}

/// Save the model as a projection bundle directory.
///
/// # Safety
/// `model` must be a live model handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_save(
    model: *const OmvslModel,
    dir: *const c_char,
) -> OmvslStatus {
    let Some(m) = model.as_ref() else {
        return fail_msg(OmvslStatus::NullPointer, "model handle is null");
    };
    let dir = match dir_from_cstr(dir) {
        Ok(d) => d,
        Err(status) => return status,
    };
    match save_bundle(Path::new(&dir), &m.bundle) {
        Ok(()) => OmvslStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Load a projection bundle directory into a new model handle.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` writable pointer
/// storage.
#[no_mangle]
pub unsafe extern "C" fn omvsl_model_load(
    dir: *const c_char,
    out: *mut *mut OmvslModel,
) -> OmvslStatus {
    if out.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "output pointer is null");
    }
    let dir = match dir_from_cstr(dir) {
        Ok(d) => d,
        Err(status) => return status,
    };
    match load_bundle(Path::new(&dir)) {
        Ok(bundle) => {
            out.write(Box::into_raw(Box::new(OmvslModel { bundle })));
            OmvslStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Top eigenpair of the dense symmetric pencil `(A, B)`; both matrices are
/// `dim x dim` row-major, `B` positive semi-definite. Writes the eigenvalue
/// to `rho` and, when `x` is non-null, the unit eigenvector to `x[0..dim]`.
///
/// # Safety
/// `a` and `b` must point to `dim * dim` readable doubles, `rho` must be
/// writable, and `x` must be null or point to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn omvsl_solve_eig_dense(
    a: *const f64,
    b: *const f64,
    dim: usize,
    opts: *const OmvslSolverOptions,
    rho: *mut f64,
    x: *mut f64,
) -> OmvslStatus {
    if a.is_null() || b.is_null() || rho.is_null() {
        return fail_msg(OmvslStatus::NullPointer, "matrix or output pointer is null");
    }
    if dim == 0 {
        return fail_msg(OmvslStatus::InvalidArgument, "dimension must be positive");
    }
    let a_slice = std::slice::from_raw_parts(a, dim * dim);
    let b_slice = std::slice::from_raw_parts(b, dim * dim);
    let a_mat = DMatrix::from_fn(dim, dim, |i, j| a_slice[i * dim + j]);
    let b_mat = DMatrix::from_fn(dim, dim, |i, j| b_slice[i * dim + j]);
    let config = match opts.as_ref() {
        Some(o) => SolverConfig {
            krylov_order: o.krylov_order,
            tol: o.tol,
            max_iters: o.max_iters,
            guard_tol: o.guard_tol,
            seed: o.seed,
        },
        None => SolverConfig::default(),
    };
    let pencil = match (DenseSymOp::new(a_mat), DenseSymOp::new(b_mat)) {
        (Ok(a_op), Ok(b_op)) => {
            match Pencil::new(Arc::new(a_op), Arc::new(b_op), BlockLayout::single(dim)) {
                Ok(p) => p,
                Err(e) => return fail(&e),
            }
        }
        (Err(e), _) | (_, Err(e)) => return fail(&e),
    };
    match loecg(&pencil, &config) {
        Ok(res) => {
            rho.write(res.rho);
            if !x.is_null() {
                std::slice::from_raw_parts_mut(x, dim).copy_from_slice(res.x.as_slice());
            }
            OmvslStatus::Ok
        }
        Err(e) => fail(&e),
    }
}
