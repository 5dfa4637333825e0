//! Dense vector/matrix kernels and the abstract symmetric-operator layer.
//!
//! Everything downstream (the eigensolver, the projection driver, the model
//! registry) talks to data exclusively through [`SymmetricOperator`] and
//! [`BlockOp`]: a symmetric linear map is a dimension plus a matrix-vector
//! product, and a coupling block between two views is a rectangular map with
//! its transpose action. Operators never materialize the matrices they
//! represent; products like `X H X'` are applied factor by factor.

mod lanczos;

pub use lanczos::lanczos_basis;
pub(crate) use lanczos::orthogonalize_against;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative breakdown threshold for Lanczos truncation and related guards.
pub const BREAKDOWN_TOL: f64 = 1e-12;

/// Abstract symmetric linear map: the universal currency of all solvers.
///
/// Implementations must be deterministic, side-effect free, and symmetric
/// (`<u, op(v)> == <v, op(u)>` up to roundoff). Operators are immutable after
/// construction and safe to share across threads.
pub trait SymmetricOperator: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// Rectangular coupling block between two vector spaces, with its transpose.
///
/// A block mapping view `t` to view `s` has `nrows() = d_s`, `ncols() = d_t`;
/// `apply_transpose` is the action of the transposed matrix.
pub trait BlockOp: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64>;
}

/// Number of worker threads for optional parallel block application.
///
/// Controlled by the `OMVSL_THREADS` environment variable; defaults to 1
/// (strictly sequential). Parallel application distributes whole output
/// blocks over threads, so results are identical to the sequential path.
pub fn configured_threads() -> usize {
    static THREADS: std::sync::OnceLock<usize> = std::sync::OnceLock::new();
    *THREADS.get_or_init(|| {
        std::env::var("OMVSL_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}

/// Subtract the mean of `x` from every entry.
///
/// This is the action of the centering matrix `H_m = I - (1/m) 1 1'`.
pub fn center(x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyVector);
    }
    let mut y = x.clone();
    subtract_mean(&mut y);
    Ok(y)
}

pub(crate) fn subtract_mean(x: &mut DVector<f64>) {
    let m = x.len() as f64;
    let mean = x.sum() / m;
    for v in x.iter_mut() {
        *v -= mean;
    }
}

/// Sizes and offsets of the per-view blocks of a concatenated vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockLayout {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for &s in &sizes {
            offsets.push(total);
            total += s;
        }
        BlockLayout {
            sizes,
            offsets,
            total,
        }
    }

    pub fn single(dim: usize) -> Self {
        Self::new(vec![dim])
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, s: usize) -> usize {
        self.sizes[s]
    }

    pub fn offset(&self, s: usize) -> usize {
        self.offsets[s]
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s] + self.sizes[s]
    }

    /// Copy out the per-block pieces of `x`.
    pub fn split(&self, x: &DVector<f64>) -> Vec<DVector<f64>> {
        assert_eq!(x.len(), self.total, "layout/vector length mismatch");
        (0..self.num_blocks())
            .map(|s| x.rows(self.offsets[s], self.sizes[s]).into_owned())
            .collect()
    }

    /// Concatenate per-block pieces back into one vector.
    pub fn concat(&self, parts: &[DVector<f64>]) -> DVector<f64> {
        assert_eq!(parts.len(), self.num_blocks());
        let mut out = DVector::zeros(self.total);
        for (s, p) in parts.iter().enumerate() {
            assert_eq!(p.len(), self.sizes[s]);
            out.rows_mut(self.offsets[s], self.sizes[s]).copy_from(p);
        }
        out
    }
}

/// A concatenated vector together with its per-view block layout.
#[derive(Debug, Clone)]
pub struct BlockVector {
    pub layout: BlockLayout,
    pub data: DVector<f64>,
}

impl BlockVector {
    pub fn new(layout: BlockLayout, data: DVector<f64>) -> Result<Self> {
        if layout.total() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.total(),
                got: data.len(),
            });
        }
        Ok(BlockVector { layout, data })
    }

    pub fn block(&self, s: usize) -> DVector<f64> {
        self.data
            .rows(self.layout.offset(s), self.layout.size(s))
            .into_owned()
    }
}

/// Matrix-free Gram-form operator `scale * left * C * right'` where `C` is
/// the centering matrix (or the identity when centering is off).
///
/// With `left == right` the induced square operator is symmetric positive
/// semi-definite. The factored product is never materialized; an apply is
/// two matrix-vector products and an optional mean subtraction.
#[derive(Clone)]
pub struct GramOperator {
    left: Arc<DMatrix<f64>>,
    right: Arc<DMatrix<f64>>,
    center: bool,
    scale: f64,
}

impl GramOperator {
    pub fn new(
        left: Arc<DMatrix<f64>>,
        right: Arc<DMatrix<f64>>,
        center: bool,
        scale: f64,
    ) -> Result<Self> {
        if left.ncols() != right.ncols() {
            return Err(Error::DimensionMismatch {
                expected: left.ncols(),
                got: right.ncols(),
            });
        }
        Ok(GramOperator {
            left,
            right,
            center,
            scale,
        })
    }

    /// PSD Gram operator `scale * mat * C * mat'`.
    pub fn symmetric(mat: Arc<DMatrix<f64>>, center: bool, scale: f64) -> Self {
        GramOperator {
            left: mat.clone(),
            right: mat,
            center,
            scale,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        Arc::ptr_eq(&self.left, &self.right)
    }

    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.right.nrows(), "gram apply dimension");
        let mut z = self.right.tr_mul(x);
        if self.center {
            subtract_mean(&mut z);
        }
        (&*self.left * z) * self.scale
    }

    fn backward(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.left.nrows(), "gram transpose dimension");
        let mut z = self.left.tr_mul(y);
        if self.center {
            subtract_mean(&mut z);
        }
        (&*self.right * z) * self.scale
    }
}

impl BlockOp for GramOperator {
    fn nrows(&self) -> usize {
        self.left.nrows()
    }

    fn ncols(&self) -> usize {
        self.right.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.forward(x)
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.backward(y)
    }
}

impl SymmetricOperator for GramOperator {
    fn dim(&self) -> usize {
        debug_assert!(self.is_symmetric(), "symmetric use of a cross block");
        self.left.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.forward(x)
    }
}

/// Symmetric operator stored as an explicit dense symmetric matrix.
pub struct DenseSymOp {
    matrix: DMatrix<f64>,
}

impl DenseSymOp {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        Ok(DenseSymOp { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl SymmetricOperator for DenseSymOp {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
}

impl BlockOp for DenseSymOp {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(y)
    }
}

/// The zero map between two spaces.
pub struct ZeroOp {
    rows: usize,
    cols: usize,
}

impl ZeroOp {
    pub fn new(rows: usize, cols: usize) -> Self {
        ZeroOp { rows, cols }
    }

    pub fn square(dim: usize) -> Self {
        ZeroOp {
            rows: dim,
            cols: dim,
        }
    }
}

impl BlockOp for ZeroOp {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.cols);
        DVector::zeros(self.rows)
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.rows);
        DVector::zeros(self.cols)
    }
}

impl SymmetricOperator for ZeroOp {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.rows, self.cols);
        self.rows
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.cols);
        DVector::zeros(self.rows)
    }
}

/// A block scaled by a constant factor, e.g. `alpha * C_st`.
pub struct ScaledBlock {
    inner: Arc<dyn BlockOp>,
    factor: f64,
}

impl ScaledBlock {
    pub fn new(inner: Arc<dyn BlockOp>, factor: f64) -> Self {
        ScaledBlock { inner, factor }
    }
}

impl BlockOp for ScaledBlock {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.apply(x) * self.factor
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.inner.apply_transpose(y) * self.factor
    }
}

/// `inner + eps * I`: diagonal regularization of a symmetric operator.
pub struct RegularizedOp {
    inner: Arc<dyn SymmetricOperator>,
    eps: f64,
}

impl RegularizedOp {
    pub fn new(inner: Arc<dyn SymmetricOperator>, eps: f64) -> Self {
        RegularizedOp { inner, eps }
    }
}

impl SymmetricOperator for RegularizedOp {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = self.inner.apply(x);
        y.axpy(self.eps, x, 1.0);
        y
    }
}

/// Adapter presenting a symmetric operator as a (square) coupling block.
pub struct SymBlock(pub Arc<dyn SymmetricOperator>);

impl BlockOp for SymBlock {
    fn nrows(&self) -> usize {
        self.0.dim()
    }

    fn ncols(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.0.apply(x)
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.0.apply(y)
    }
}

/// A `v x v` grid of coupling blocks with symmetric pairing: entry `(s,t)`
/// maps view-`t` vectors to view-`s` vectors and entry `(t,s)` must act as
/// its transpose. `None` entries are zero blocks.
pub struct BlockGrid {
    grid: Vec<Vec<Option<Arc<dyn BlockOp>>>>,
    layout: BlockLayout,
}

impl BlockGrid {
    pub fn new(grid: Vec<Vec<Option<Arc<dyn BlockOp>>>>, layout: BlockLayout) -> Result<Self> {
        let v = layout.num_blocks();
        if grid.len() != v || grid.iter().any(|row| row.len() != v) {
            return Err(Error::DimensionMismatch {
                expected: v,
                got: grid.len(),
            });
        }
        for (s, row) in grid.iter().enumerate() {
            for (t, entry) in row.iter().enumerate() {
                if let Some(op) = entry {
                    if op.nrows() != layout.size(s) || op.ncols() != layout.size(t) {
                        return Err(Error::DimensionMismatch {
                            expected: layout.size(s),
                            got: op.nrows(),
                        });
                    }
                }
            }
        }
        Ok(BlockGrid { grid, layout })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn num_views(&self) -> usize {
        self.layout.num_blocks()
    }

    pub fn block(&self, s: usize, t: usize) -> Option<&Arc<dyn BlockOp>> {
        self.grid[s][t].as_ref()
    }

    /// Apply the whole grid to a concatenated vector: `y_s = sum_t Phi_st x_t`.
    pub fn apply_concat(&self, x: &DVector<f64>) -> DVector<f64> {
        let parts = self.layout.split(x);
        let v = self.num_views();
        let compute = |s: usize| -> DVector<f64> {
            let mut y = DVector::zeros(self.layout.size(s));
            for (t, part) in parts.iter().enumerate() {
                if let Some(op) = &self.grid[s][t] {
                    y += op.apply(part);
                }
            }
            y
        };
        let outs: Vec<DVector<f64>> = if configured_threads() > 1 && v > 1 {
            use rayon::prelude::*;
            thread_pool().install(|| (0..v).into_par_iter().map(compute).collect())
        } else {
            (0..v).map(compute).collect()
        };
        self.layout.concat(&outs)
    }
}

fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: std::sync::OnceLock<rayon::ThreadPool> = std::sync::OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(configured_threads())
            .build()
            .expect("thread pool")
    })
}

/// Block-diagonal symmetric operator, one block per view.
pub struct BlockDiagOp {
    blocks: Vec<Arc<dyn SymmetricOperator>>,
    layout: BlockLayout,
}

impl BlockDiagOp {
    pub fn new(blocks: Vec<Arc<dyn SymmetricOperator>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidConfig("empty block sequence".into()));
        }
        let layout = BlockLayout::new(blocks.iter().map(|b| b.dim()).collect());
        Ok(BlockDiagOp { blocks, layout })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn block(&self, s: usize) -> &Arc<dyn SymmetricOperator> {
        &self.blocks[s]
    }
}

impl SymmetricOperator for BlockDiagOp {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let parts = self.layout.split(x);
        let outs: Vec<DVector<f64>> = self
            .blocks
            .iter()
            .zip(parts.iter())
            .map(|(b, p)| b.apply(p))
            .collect();
        self.layout.concat(&outs)
    }
}

/// Full symmetric block operator assembled from a [`BlockGrid`].
///
/// Construction runs a randomized symmetry check over every block pair; a
/// failure signals a bug in whatever built the grid.
pub struct BlockFullOp {
    grid: Arc<BlockGrid>,
}

impl BlockFullOp {
    pub fn new(grid: Arc<BlockGrid>) -> Result<Self> {
        check_grid_symmetry(&grid)?;
        Ok(BlockFullOp { grid })
    }

    pub fn grid(&self) -> &Arc<BlockGrid> {
        &self.grid
    }
}

impl SymmetricOperator for BlockFullOp {
    fn dim(&self) -> usize {
        self.grid.layout().total()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.grid.apply_concat(x)
    }
}

/// Randomized pairwise check that `u' Phi_st v == v' Phi_ts u`.
fn check_grid_symmetry(grid: &BlockGrid) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b10c5);
    let v = grid.num_views();
    let layout = grid.layout();
    for s in 0..v {
        for t in s..v {
            for _ in 0..2 {
                let u = random_unit(&mut rng, layout.size(s));
                let w = random_unit(&mut rng, layout.size(t));
                let st = match grid.block(s, t) {
                    Some(op) => op.apply(&w),
                    None => DVector::zeros(layout.size(s)),
                };
                let ts = match grid.block(t, s) {
                    Some(op) => op.apply(&u),
                    None => DVector::zeros(layout.size(t)),
                };
                let a = u.dot(&st);
                let b = w.dot(&ts);
                let scale = st.norm() + ts.norm() + 1e-30;
                if (a - b).abs() > 1e-10 * scale {
                    return Err(Error::AsymmetricGrid { s, t });
                }
            }
        }
    }
    Ok(())
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Orthogonal projector `I - P P'` onto the complement of an orthonormal basis.
///
/// The basis may have zero columns, in which case the projector is the
/// identity. Applications respect the bracketing `x - P (P' x)` so the cost
/// stays linear in the basis size.
pub struct DeflationProjector {
    basis: DMatrix<f64>,
}

impl DeflationProjector {
    /// Projector with an empty basis (the identity on `R^dim`).
    pub fn identity(dim: usize) -> Self {
        DeflationProjector {
            basis: DMatrix::zeros(dim, 0),
        }
    }

    /// Projector from a matrix with orthonormal columns.
    pub fn new(basis: DMatrix<f64>) -> Self {
        DeflationProjector { basis }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank_removed(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `x - basis (basis' x)`.
    pub fn project_out(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        self.project_out_mut(&mut y);
        y
    }

    pub fn project_out_mut(&self, x: &mut DVector<f64>) {
        assert_eq!(x.len(), self.basis.nrows(), "projector dimension");
        if self.basis.ncols() == 0 {
            return;
        }
        let coeff = self.basis.tr_mul(&*x);
        x.gemv(-1.0, &self.basis, &coeff, 1.0);
    }

    /// In-place projection of a mutable block view of a larger vector.
    pub fn project_out_view(&self, mut x: nalgebra::DVectorViewMut<'_, f64>) {
        assert_eq!(x.len(), self.basis.nrows(), "projector dimension");
        if self.basis.ncols() == 0 {
            return;
        }
        let coeff = self.basis.tr_mul(&x);
        x.gemv(-1.0, &self.basis, &coeff, 1.0);
    }
}

/// Block-diagonal assembly of per-view operators as in `B = diag(Psi_11, ...)`.
pub fn block_diag_op(ops: Vec<Arc<dyn SymmetricOperator>>) -> Result<BlockDiagOp> {
    BlockDiagOp::new(ops)
}

/// Full block assembly of a coupling grid as in `A = [Phi_st]`.
pub fn block_full_op(grid: Arc<BlockGrid>) -> Result<BlockFullOp> {
    BlockFullOp::new(grid)
}

/// Apply-counting wrapper used by the scaling benchmarks.
pub struct CountingOp {
    inner: Arc<dyn SymmetricOperator>,
    counter: Arc<AtomicU64>,
}

impl CountingOp {
    pub fn new(inner: Arc<dyn SymmetricOperator>, counter: Arc<AtomicU64>) -> Self {
        CountingOp { inner, counter }
    }
}

impl SymmetricOperator for CountingOp {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.counter.fetch_add(1, Ordering::Relaxed);
        self.inner.apply(x)
    }
}
