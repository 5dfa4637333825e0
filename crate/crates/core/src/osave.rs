//! Successive approximation driver: builds per-view orthonormal projections
//! column by column from deflated relaxed eigenproblems.
//!
//! Each round solves the top eigenpair of the current deflated pencil,
//! splits the eigenvector into per-view blocks, normalizes every block to a
//! unit column, and appends. Deflation wraps the base pencil with per-view
//! projectors `I - P P'`, applied around the base product, so the pencil is
//! never assembled.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eigsolve::{loecg, Pencil, SolverConfig};
use crate::error::{Error, Result};
use crate::linop::{
    random_unit, BlockGrid, BlockLayout, BlockVector, DeflationProjector, SymmetricOperator,
};

/// Per-view projection matrices with orthonormal columns, the learned
/// artifact. `|P_s' P_s - I|_max <= 1e-10` holds for every view.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    matrices: Vec<DMatrix<f64>>,
    k: usize,
}

impl ProjectionSet {
    pub fn new(matrices: Vec<DMatrix<f64>>, k: usize) -> Result<Self> {
        if matrices.is_empty() || matrices.iter().any(|m| m.ncols() != k) {
            return Err(Error::InvalidConfig(
                "projection set needs one d_s x k matrix per view".into(),
            ));
        }
        Ok(ProjectionSet { matrices, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn view_count(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, s: usize) -> &DMatrix<f64> {
        &self.matrices[s]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// Max-norm deviation of `P_s' P_s` from the identity, worst view.
    pub fn orthonormality_deviation(&self) -> f64 {
        self.matrices
            .iter()
            .map(|p| {
                let gram = p.tr_mul(p);
                (gram - DMatrix::identity(self.k, self.k)).amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Diagnostics recorded for each extracted column.
#[derive(Debug, Clone)]
pub struct ColumnDiagnostics {
    pub rho: f64,
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
    /// Worst-view `|P_s' q_s| / |q_s|` of the raw eigenvector block against
    /// the columns already extracted.
    pub feasibility: f64,
    /// Per-view block norms of the raw eigenvector.
    pub gammas: Vec<f64>,
}

/// Accumulated per-view columns and eigenvalue history during a run.
pub struct DeflationState {
    bases: Vec<DMatrix<f64>>,
    history: Vec<f64>,
    columns: Vec<ColumnDiagnostics>,
}

impl DeflationState {
    pub fn empty(layout: &BlockLayout) -> Self {
        DeflationState {
            bases: layout
                .sizes()
                .iter()
                .map(|&d| DMatrix::zeros(d, 0))
                .collect(),
            history: Vec::new(),
            columns: Vec::new(),
        }
    }

    /// Build a state from per-view column matrices, which must already have
    /// orthonormal columns and a shared column count.
    pub fn from_bases(bases: Vec<DMatrix<f64>>) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::InvalidConfig("state needs at least one view".into()));
        }
        let l = bases[0].ncols();
        for (s, b) in bases.iter().enumerate() {
            if b.ncols() != l {
                return Err(Error::DimensionMismatch {
                    expected: l,
                    got: b.ncols(),
                });
            }
            let gram = b.tr_mul(b);
            if (gram - DMatrix::identity(l, l)).amax() > 1e-10 {
                return Err(Error::InvalidConfig(format!(
                    "state columns of view {s} are not orthonormal"
                )));
            }
        }
        Ok(DeflationState {
            bases,
            history: vec![f64::NAN; l],
            columns: Vec::new(),
        })
    }

    pub fn level(&self) -> usize {
        self.history.len()
    }

    pub fn basis(&self, s: usize) -> &DMatrix<f64> {
        &self.bases[s]
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    fn push_column(&mut self, cols: &[DVector<f64>], diag: ColumnDiagnostics) {
        for (s, col) in cols.iter().enumerate() {
            let d = self.bases[s].nrows();
            let l = self.bases[s].ncols();
            let mut grown = DMatrix::zeros(d, l + 1);
            grown.view_mut((0, 0), (d, l)).copy_from(&self.bases[s]);
            grown.set_column(l, col);
            self.bases[s] = grown;
        }
        self.history.push(diag.rho);
        self.columns.push(diag);
    }

    fn projectors(&self) -> Vec<DeflationProjector> {
        self.bases
            .iter()
            .map(|b| DeflationProjector::new(b.clone()))
            .collect()
    }
}

/// Deflated pencil operator: per-view `I - P P'` around the base product.
struct DeflatedOp {
    base: Arc<dyn SymmetricOperator>,
    projectors: Arc<Vec<DeflationProjector>>,
    layout: BlockLayout,
}

impl DeflatedOp {
    fn project_blocks(&self, x: &mut DVector<f64>) {
        for (s, proj) in self.projectors.iter().enumerate() {
            proj.project_out_view(x.rows_mut(self.layout.offset(s), self.layout.size(s)));
        }
    }
}

impl SymmetricOperator for DeflatedOp {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut t = x.clone();
        self.project_blocks(&mut t);
        let mut y = self.base.apply(&t);
        self.project_blocks(&mut y);
        y
    }
}

/// Wrap both sides of a pencil with the state's per-view deflation
/// projectors. With an empty state the result acts exactly like the base.
pub fn deflate_pencil(base: &Pencil, state: &DeflationState) -> Pencil {
    let projectors = Arc::new(state.projectors());
    let layout = base.block_sizes.clone();
    let a: Arc<dyn SymmetricOperator> = Arc::new(DeflatedOp {
        base: base.a.clone(),
        projectors: projectors.clone(),
        layout: layout.clone(),
    });
    let b: Arc<dyn SymmetricOperator> = Arc::new(DeflatedOp {
        base: base.b.clone(),
        projectors,
        layout: layout.clone(),
    });
    Pencil::new_unchecked(a, b, layout)
}

/// Split a concatenated eigenvector into per-view blocks and normalize each
/// block to a unit column, returning the block norms as the gammas.
///
/// A block whose norm falls below `1e-10 |q|` signals view degeneracy.
pub fn split_normalize(q: &BlockVector) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let tau = 1e-10 * q.data.norm();
    let v = q.layout.num_blocks();
    let mut gammas = Vec::with_capacity(v);
    let mut units = Vec::with_capacity(v);
    for s in 0..v {
        let block = q.block(s);
        let gamma = block.norm();
        if gamma <= tau {
            return Err(Error::DegenerateView {
                view: s,
                column: 0,
                norm: gamma,
            });
        }
        let mut p = block / gamma;
        let n = p.norm();
        p /= n;
        gammas.push(gamma);
        units.push(p);
    }
    Ok((gammas, units))
}

/// What to do when an extracted eigenvector has a vanishing view block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneracyPolicy {
    /// Fail with a diagnostic naming the view and column.
    #[default]
    Error,
    /// Fill the degenerate column with a deterministic unit vector in the
    /// range of the view's constraint block, orthogonal to the columns
    /// already extracted.
    FillDeterministic,
}

/// Outcome of an OSAVE run: the projections plus per-column diagnostics.
pub struct OsaveResult {
    pub projections: ProjectionSet,
    /// Top eigenvalue of each successively deflated pencil, in column order.
    pub eigenvalues: Vec<f64>,
    pub columns: Vec<ColumnDiagnostics>,
}

/// Learn `k` orthonormal columns per view from the pencil by successive
/// deflated top-eigenpair solves.
///
/// Eigensolver hard errors propagate; a non-converged solve is recorded in
/// the column diagnostics and the run continues with the best iterate.
pub fn osave(
    base: &Pencil,
    k: usize,
    config: &SolverConfig,
    policy: DegeneracyPolicy,
) -> Result<OsaveResult> {
    let layout = &base.block_sizes;
    let min_d = layout.sizes().iter().copied().min().unwrap_or(0);
    if k == 0 || k > min_d {
        return Err(Error::InvalidK { k, max: min_d });
    }

    let mut state = DeflationState::empty(layout);
    for level in 0..k {
        let pencil = if level == 0 {
            base.clone()
        } else {
            deflate_pencil(base, &state)
        };
        let sub = config
            .clone()
            .with_seed(config.seed.wrapping_add(level as u64));
        let eig = loecg(&pencil, &sub)?;
        let q = BlockVector::new(layout.clone(), eig.x.clone())?;

        let feasibility = feasibility_of(&q, &state);
        let (gammas, mut units) = match split_normalize(&q) {
            Ok(pair) => pair,
            Err(Error::DegenerateView { view, norm, .. }) => match policy {
                DegeneracyPolicy::Error => {
                    return Err(Error::DegenerateView {
                        view,
                        column: level,
                        norm,
                    })
                }
                DegeneracyPolicy::FillDeterministic => {
                    fill_degenerate_blocks(&q, base, &state, &sub, level)?
                }
            },
            Err(e) => return Err(e),
        };

        // One re-orthogonalization pass against the accumulated columns
        // guards the 1e-10 orthonormality bound against rounding drift.
        for (s, p) in units.iter_mut().enumerate() {
            let basis = state.basis(s);
            if basis.ncols() > 0 {
                let coeff = basis.tr_mul(&*p);
                p.gemv(-1.0, basis, &coeff, 1.0);
            }
            let n = p.norm();
            if n <= 1e-10 {
                return Err(Error::DegenerateView {
                    view: s,
                    column: level,
                    norm: n,
                });
            }
            *p /= n;
        }

        state.push_column(
            &units,
            ColumnDiagnostics {
                rho: eig.rho,
                residual: eig.residual,
                iters: eig.iters,
                converged: eig.converged,
                feasibility,
                gammas,
            },
        );
    }

    let matrices = state.bases.clone();
    Ok(OsaveResult {
        projections: ProjectionSet::new(matrices, k)?,
        eigenvalues: state.history.clone(),
        columns: state.columns,
    })
}

fn feasibility_of(q: &BlockVector, state: &DeflationState) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..q.layout.num_blocks() {
        let basis = state.basis(s);
        if basis.ncols() == 0 {
            continue;
        }
        let block = q.block(s);
        let norm = block.norm();
        if norm == 0.0 {
            continue;
        }
        worst = worst.max(basis.tr_mul(&block).norm() / norm);
    }
    worst
}

/// Granular split for the deterministic-fill policy: healthy blocks are
/// normalized as usual, degenerate ones are synthesized by deflated power
/// iteration on the constraint operator restricted to the view.
fn fill_degenerate_blocks(
    q: &BlockVector,
    base: &Pencil,
    state: &DeflationState,
    config: &SolverConfig,
    level: usize,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let tau = 1e-10 * q.data.norm();
    let layout = &q.layout;
    let deflated = deflate_pencil(base, state);
    let mut gammas = Vec::new();
    let mut units = Vec::new();
    for s in 0..layout.num_blocks() {
        let block = q.block(s);
        let gamma = block.norm();
        if gamma > tau {
            let mut p = block / gamma;
            let n = p.norm();
            p /= n;
            gammas.push(gamma);
            units.push(p);
            continue;
        }
        let col = deterministic_range_vector(&deflated, layout, s, config.seed, level)?;
        gammas.push(0.0);
        units.push(col);
    }
    Ok((gammas, units))
}

/// Deterministic unit vector in the range of the deflated constraint block
/// of view `s`, found by power iteration supported on that view's block.
fn deterministic_range_vector(
    deflated: &Pencil,
    layout: &BlockLayout,
    s: usize,
    seed: u64,
    level: usize,
) -> Result<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((s as u64) << 32) ^ level as u64);
    let d = layout.total();
    let range = layout.range(s);
    let mut u = DVector::zeros(d);
    u.rows_mut(range.start, layout.size(s))
        .copy_from(&random_unit(&mut rng, layout.size(s)));
    let mut norm = 0.0;
    for _ in 0..50 {
        let mut v = deflated.b.apply(&u);
        // The constraint operator is block diagonal; clamp stray mass anyway.
        for i in 0..d {
            if !range.contains(&i) {
                v[i] = 0.0;
            }
        }
        norm = v.norm();
        if norm <= 1e-280 {
            break;
        }
        u = v / norm;
    }
    if norm <= 1e-280 {
        return Err(Error::DegenerateView {
            view: s,
            column: level,
            norm,
        });
    }
    Ok(u.rows(range.start, layout.size(s)).into_owned())
}

/// The relaxed objective `f(q) = sum_st q_s' Phi_st q_t`.
pub fn relaxed_objective(q: &BlockVector, phi: &BlockGrid) -> f64 {
    let parts = q.layout.split(&q.data);
    let v = q.layout.num_blocks();
    let mut f = 0.0;
    for s in 0..v {
        for t in 0..v {
            if let Some(op) = phi.block(s, t) {
                f += parts[s].dot(&op.apply(&parts[t]));
            }
        }
    }
    f
}

/// The trace-ratio objective `g({P_s})`, reported for model comparison; the
/// driver never optimizes it directly.
pub fn trace_ratio_objective(
    p: &ProjectionSet,
    phi: &BlockGrid,
    psi: &[Arc<dyn SymmetricOperator>],
) -> Result<f64> {
    let v = p.view_count();
    let k = p.k();
    if phi.num_views() != v || psi.len() != v {
        return Err(Error::DimensionMismatch {
            expected: v,
            got: psi.len(),
        });
    }
    let mut weights = Vec::with_capacity(v);
    for (s, psi_s) in psi.iter().enumerate() {
        let mat = p.matrix(s);
        let mut tr = 0.0;
        for j in 0..k {
            let col = mat.column(j).into_owned();
            tr += col.dot(&psi_s.apply(&col));
        }
        if tr <= 1e-14 * k as f64 {
            return Err(Error::VanishingDenominator { view: s });
        }
        weights.push(tr.sqrt());
    }
    let mut g = 0.0;
    for s in 0..v {
        for t in 0..v {
            if let Some(op) = phi.block(s, t) {
                let mut num = 0.0;
                for j in 0..k {
                    let pt = p.matrix(t).column(j).into_owned();
                    num += p.matrix(s).column(j).dot(&op.apply(&pt));
                }
                g += num / (weights[s] * weights[t]);
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{block_diag_op, BlockOp, DenseSymOp, ZeroOp};
    use rand::RngExt;
    use rand_distr::StandardNormal;

    fn diag_pencil(a: &[f64], b: &[f64]) -> Pencil {
        let da = DMatrix::from_diagonal(&DVector::from_row_slice(a));
        let db = DMatrix::from_diagonal(&DVector::from_row_slice(b));
        Pencil::new(
            Arc::new(DenseSymOp::new(da).unwrap()),
            Arc::new(DenseSymOp::new(db).unwrap()),
            BlockLayout::single(a.len()),
        )
        .unwrap()
    }

    fn seeded_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn empty_deflation_acts_like_base() {
        let pencil = diag_pencil(&[3.0, 2.0, 1.0], &[1.0, 1.0, 1.0]);
        let state = DeflationState::empty(&pencil.block_sizes);
        let deflated = deflate_pencil(&pencil, &state);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(deflated.a.apply(&x), pencil.a.apply(&x));
        assert_eq!(deflated.b.apply(&x), pencil.b.apply(&x));
    }

    #[test]
    fn coordinate_deflation_of_diagonal() {
        let pencil = diag_pencil(&[3.0, 2.0, 1.0], &[1.0, 1.0, 1.0]);
        let mut state = DeflationState::empty(&pencil.block_sizes);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        state.push_column(
            &[e1],
            ColumnDiagnostics {
                rho: 3.0,
                residual: 0.0,
                iters: 0,
                converged: true,
                feasibility: 0.0,
                gammas: vec![1.0],
            },
        );
        let deflated = deflate_pencil(&pencil, &state);
        let e2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let y = deflated.a.apply(&e2);
        assert!((y - &e2 * 2.0).norm() < 1e-14);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(deflated.a.apply(&e1).norm() < 1e-14);
    }

    #[test]
    fn deflation_matches_dense_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let sizes = vec![6usize, 5];
        let layout = BlockLayout::new(sizes.clone());
        let d = layout.total();
        let g = seeded_matrix(&mut rng, d, d);
        let a_dense = (&g + g.transpose()) * 0.5;
        let b_dense = {
            let c = seeded_matrix(&mut rng, d, d);
            &c * c.transpose()
        };
        let pencil = Pencil::new(
            Arc::new(DenseSymOp::new(a_dense.clone()).unwrap()),
            Arc::new(DenseSymOp::new(b_dense.clone()).unwrap()),
            layout.clone(),
        )
        .unwrap();
        let mut state = DeflationState::empty(&layout);
        let cols: Vec<DVector<f64>> = sizes
            .iter()
            .map(|&ds| {
                let q = seeded_matrix(&mut rng, ds, 1).qr().q();
                q.column(0).into_owned()
            })
            .collect();
        state.push_column(
            &cols,
            ColumnDiagnostics {
                rho: 0.0,
                residual: 0.0,
                iters: 0,
                converged: true,
                feasibility: 0.0,
                gammas: vec![1.0, 1.0],
            },
        );
        // Dense oracle: Pi A Pi with the block-diagonal projector.
        let mut pi = DMatrix::identity(d, d);
        for (s, col) in cols.iter().enumerate() {
            let mut full = DVector::zeros(d);
            full.rows_mut(layout.offset(s), layout.size(s))
                .copy_from(col);
            pi -= &full * full.transpose();
        }
        let want_a = &pi * &a_dense * &pi;
        let deflated = deflate_pencil(&pencil, &state);
        let x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let got = deflated.a.apply(&x);
        let want = &want_a * &x;
        assert!((got - &want).norm() <= 1e-11 * want.norm().max(1.0));
    }

    #[test]
    fn split_normalize_arithmetic() {
        let layout = BlockLayout::new(vec![2, 2]);
        let q = BlockVector::new(layout, DVector::from_vec(vec![3.0, 4.0, 0.0, -2.0])).unwrap();
        let (gammas, units) = split_normalize(&q).unwrap();
        assert_eq!(gammas, vec![5.0, 2.0]);
        assert!((units[0].clone() - DVector::from_vec(vec![0.6, 0.8])).norm() < 1e-15);
        assert!((units[1].clone() - DVector::from_vec(vec![0.0, -1.0])).norm() < 1e-15);
    }

    #[test]
    fn split_normalize_flags_degenerate_view() {
        let layout = BlockLayout::new(vec![1, 1]);
        let q = BlockVector::new(layout, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        match split_normalize(&q) {
            Err(Error::DegenerateView { view, .. }) => assert_eq!(view, 1),
            _ => panic!("expected degeneracy"),
        }
    }

    #[test]
    fn split_normalize_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layout = BlockLayout::new(vec![3, 4, 2]);
        let data = DVector::from_fn(9, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = BlockVector::new(layout.clone(), data.clone()).unwrap();
        let (gammas, units) = split_normalize(&q).unwrap();
        for s in 0..3 {
            let block = data.rows(layout.offset(s), layout.size(s)).into_owned();
            assert!((gammas[s] - block.norm()).abs() < 1e-15);
            assert!((units[s].clone() - &block / block.norm()).norm() < 1e-14);
            assert!((units[s].norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn osave_single_view_diagonal() {
        let pencil = diag_pencil(&[3.0, 2.0, 1.0], &[1.0, 1.0, 1.0]);
        let res = osave(
            &pencil,
            2,
            &SolverConfig::default(),
            DegeneracyPolicy::Error,
        )
        .unwrap();
        assert!((res.eigenvalues[0] - 3.0).abs() < 1e-6);
        assert!((res.eigenvalues[1] - 2.0).abs() < 1e-6);
        let p = res.projections.matrix(0);
        assert!(p.column(0)[0].abs() > 1.0 - 1e-8);
        assert!(p.column(1)[1].abs() > 1.0 - 1e-8);
        assert!(res.projections.orthonormality_deviation() <= 1e-10);
    }

    #[test]
    fn osave_full_k_gives_square_orthogonal() {
        let pencil = diag_pencil(&[3.0, 2.0, 1.0], &[1.0, 1.0, 1.0]);
        let res = osave(
            &pencil,
            3,
            &SolverConfig::default(),
            DegeneracyPolicy::Error,
        )
        .unwrap();
        let p = res.projections.matrix(0);
        assert_eq!(p.shape(), (3, 3));
        assert!((p.tr_mul(p) - DMatrix::identity(3, 3)).amax() <= 1e-10);
    }

    #[test]
    fn osave_rejects_oversized_k() {
        let pencil = diag_pencil(&[3.0, 2.0], &[1.0, 1.0]);
        assert!(matches!(
            osave(
                &pencil,
                3,
                &SolverConfig::default(),
                DegeneracyPolicy::Error
            ),
            Err(Error::InvalidK { k: 3, max: 2 })
        ));
    }

    #[test]
    fn relaxed_objective_zero_grid() {
        let layout = BlockLayout::new(vec![2, 3]);
        let grid =
            BlockGrid::new(vec![vec![None, None], vec![None, None]], layout.clone()).unwrap();
        let q = BlockVector::new(layout, DVector::from_element(5, 1.0)).unwrap();
        assert_eq!(relaxed_objective(&q, &grid), 0.0);
    }

    #[test]
    fn relaxed_objective_identity_single_view() {
        let layout = BlockLayout::new(vec![3]);
        let eye: Arc<dyn BlockOp> = Arc::new(DenseSymOp::new(DMatrix::identity(3, 3)).unwrap());
        let grid = BlockGrid::new(vec![vec![Some(eye)]], layout.clone()).unwrap();
        let q = BlockVector::new(layout, DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert!((relaxed_objective(&q, &grid) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn relaxed_objective_consistent_with_full_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let layout = BlockLayout::new(vec![3, 2]);
        let s11 = {
            let g = seeded_matrix(&mut rng, 3, 3);
            (&g + g.transpose()) * 0.5
        };
        let s22 = {
            let g = seeded_matrix(&mut rng, 2, 2);
            (&g + g.transpose()) * 0.5
        };
        let c12 = seeded_matrix(&mut rng, 3, 2);
        struct Rect(DMatrix<f64>);
        impl BlockOp for Rect {
            fn nrows(&self) -> usize {
                self.0.nrows()
            }
            fn ncols(&self) -> usize {
                self.0.ncols()
            }
            fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
                &self.0 * x
            }
            fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
                self.0.tr_mul(y)
            }
        }
        let grid = BlockGrid::new(
            vec![
                vec![
                    Some(Arc::new(DenseSymOp::new(s11).unwrap()) as Arc<dyn BlockOp>),
                    Some(Arc::new(Rect(c12.clone()))),
                ],
                vec![
                    Some(Arc::new(Rect(c12.transpose()))),
                    Some(Arc::new(DenseSymOp::new(s22).unwrap())),
                ],
            ],
            layout.clone(),
        )
        .unwrap();
        let full = crate::linop::block_full_op(Arc::new(grid)).unwrap();
        let data = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = BlockVector::new(layout, data.clone()).unwrap();
        let f = relaxed_objective(&q, full.grid());
        let want = data.dot(&SymmetricOperator::apply(&full, &data));
        assert!((f - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn trace_ratio_identity_is_one() {
        let layout = BlockLayout::new(vec![3]);
        let eye: Arc<dyn BlockOp> = Arc::new(DenseSymOp::new(DMatrix::identity(3, 3)).unwrap());
        let grid = BlockGrid::new(vec![vec![Some(eye)]], layout).unwrap();
        let psi: Vec<Arc<dyn SymmetricOperator>> =
            vec![Arc::new(DenseSymOp::new(DMatrix::identity(3, 3)).unwrap())];
        let p = ProjectionSet::new(vec![DMatrix::identity(3, 3).columns(0, 2).into_owned()], 2)
            .unwrap();
        let g = trace_ratio_objective(&p, &grid, &psi).unwrap();
        assert!((g - 1.0).abs() < 1e-14);
    }

    #[test]
    fn trace_ratio_zero_diagonal_contributes_nothing() {
        // OM2CCA-style grid: zero diagonal blocks, so only cross terms count.
        let layout = BlockLayout::new(vec![2, 2]);
        let zero: Arc<dyn BlockOp> = Arc::new(ZeroOp::square(2));
        let grid = BlockGrid::new(
            vec![vec![Some(zero.clone()), None], vec![None, Some(zero)]],
            layout,
        )
        .unwrap();
        let psi: Vec<Arc<dyn SymmetricOperator>> = vec![
            Arc::new(DenseSymOp::new(DMatrix::identity(2, 2)).unwrap()),
            Arc::new(DenseSymOp::new(DMatrix::identity(2, 2)).unwrap()),
        ];
        let p =
            ProjectionSet::new(vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)], 2).unwrap();
        let g = trace_ratio_objective(&p, &grid, &psi).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn trace_ratio_matches_dense_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let sizes = vec![5usize, 4];
        let layout = BlockLayout::new(sizes.clone());
        let k = 2;
        // Dense symmetric grid and SPD constraint blocks.
        let phi11 = {
            let g = seeded_matrix(&mut rng, 5, 5);
            (&g + g.transpose()) * 0.5
        };
        let phi22 = {
            let g = seeded_matrix(&mut rng, 4, 4);
            (&g + g.transpose()) * 0.5
        };
        let phi12 = seeded_matrix(&mut rng, 5, 4);
        let psi1 = {
            let g = seeded_matrix(&mut rng, 5, 5);
            &g * g.transpose() + DMatrix::identity(5, 5)
        };
        let psi2 = {
            let g = seeded_matrix(&mut rng, 4, 4);
            &g * g.transpose() + DMatrix::identity(4, 4)
        };
        struct Rect(DMatrix<f64>);
        impl BlockOp for Rect {
            fn nrows(&self) -> usize {
                self.0.nrows()
            }
            fn ncols(&self) -> usize {
                self.0.ncols()
            }
            fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
                &self.0 * x
            }
            fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
                self.0.tr_mul(y)
            }
        }
        let grid = BlockGrid::new(
            vec![
                vec![
                    Some(Arc::new(DenseSymOp::new(phi11.clone()).unwrap()) as Arc<dyn BlockOp>),
                    Some(Arc::new(Rect(phi12.clone()))),
                ],
                vec![
                    Some(Arc::new(Rect(phi12.transpose()))),
                    Some(Arc::new(DenseSymOp::new(phi22.clone()).unwrap())),
                ],
            ],
            layout,
        )
        .unwrap();
        let psi: Vec<Arc<dyn SymmetricOperator>> = vec![
            Arc::new(DenseSymOp::new(psi1.clone()).unwrap()),
            Arc::new(DenseSymOp::new(psi2.clone()).unwrap()),
        ];
        let p1 = seeded_matrix(&mut rng, 5, k).qr().q();
        let p2 = seeded_matrix(&mut rng, 4, k).qr().q();
        let p = ProjectionSet::new(vec![p1.clone(), p2.clone()], k).unwrap();
        let g = trace_ratio_objective(&p, &grid, &psi).unwrap();
        let w1 = (p1.tr_mul(&(&psi1 * &p1))).trace().sqrt();
        let w2 = (p2.tr_mul(&(&psi2 * &p2))).trace().sqrt();
        let want = (p1.tr_mul(&(&phi11 * &p1))).trace() / (w1 * w1)
            + (p1.tr_mul(&(&phi12 * &p2))).trace() / (w1 * w2)
            + (p2.tr_mul(&(phi12.transpose() * &p1))).trace() / (w2 * w1)
            + (p2.tr_mul(&(&phi22 * &p2))).trace() / (w2 * w2);
        assert!((g - want).abs() <= 1e-11 * want.abs().max(1.0));
    }

    #[test]
    fn trace_ratio_vanishing_denominator_names_view() {
        let layout = BlockLayout::new(vec![2]);
        let eye: Arc<dyn BlockOp> = Arc::new(DenseSymOp::new(DMatrix::identity(2, 2)).unwrap());
        let grid = BlockGrid::new(vec![vec![Some(eye)]], layout).unwrap();
        let psi: Vec<Arc<dyn SymmetricOperator>> = vec![Arc::new(ZeroOp::square(2))];
        let p = ProjectionSet::new(vec![DMatrix::identity(2, 2)], 2).unwrap();
        match trace_ratio_objective(&p, &grid, &psi) {
            Err(Error::VanishingDenominator { view }) => assert_eq!(view, 0),
            _ => panic!("expected vanishing denominator"),
        }
    }

    #[test]
    fn osave_two_view_block_pencil() {
        // Two uncoupled diagonal views; the top deflated eigenvalues and the
        // per-view orthonormality must come out right.
        let layout = BlockLayout::new(vec![2, 2]);
        let a = block_diag_op(vec![
            Arc::new(
                DenseSymOp::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])))
                    .unwrap(),
            ) as Arc<dyn SymmetricOperator>,
            Arc::new(
                DenseSymOp::new(DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0])))
                    .unwrap(),
            ),
        ])
        .unwrap();
        let b = block_diag_op(vec![
            Arc::new(DenseSymOp::new(DMatrix::identity(2, 2)).unwrap())
                as Arc<dyn SymmetricOperator>,
            Arc::new(DenseSymOp::new(DMatrix::identity(2, 2)).unwrap()),
        ])
        .unwrap();
        let pencil = Pencil::new(Arc::new(a), Arc::new(b), layout).unwrap();
        let res = osave(
            &pencil,
            2,
            &SolverConfig::default(),
            DegeneracyPolicy::Error,
        );
        // Block norms can vanish on one view for uncoupled pencils; both the
        // error policy and the deterministic fill must keep the contract.
        match res {
            Ok(out) => assert!(out.projections.orthonormality_deviation() <= 1e-10),
            Err(Error::DegenerateView { .. }) => {
                let out = osave(
                    &pencil,
                    2,
                    &SolverConfig::default(),
                    DegeneracyPolicy::FillDeterministic,
                )
                .unwrap();
                assert!(out.projections.orthonormality_deviation() <= 1e-10);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
