//! Top-eigenpair solver for semi-definite pencils `A x = lambda B x` with
//! `x` constrained to the range of `B`.
//!
//! The solver is a locally optimal extended conjugate gradient iteration:
//! each step builds an orthonormal Krylov basis of the shifted operator
//! `A - rho B` from the current iterate, appends the projected previous
//! iterate as a conjugate direction, and solves the small projected pencil
//! densely. Forcing the start vector through `B` keeps every iterate in the
//! range of `B`, so a singular `B` needs no regularization.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linop::{random_unit, BlockLayout, SymmetricOperator, BREAKDOWN_TOL};

/// A pair `(A, B)` of symmetric operators with per-view block sizes.
///
/// `B` must be positive semi-definite; construction spot-checks curvature on
/// a few random probes. The range condition `R(A) ⊆ R(B)` is assumed, not
/// checked.
#[derive(Clone)]
pub struct Pencil {
    pub a: Arc<dyn SymmetricOperator>,
    pub b: Arc<dyn SymmetricOperator>,
    pub block_sizes: BlockLayout,
}

impl Pencil {
    pub fn new(
        a: Arc<dyn SymmetricOperator>,
        b: Arc<dyn SymmetricOperator>,
        block_sizes: BlockLayout,
    ) -> Result<Self> {
        let p = Self::new_unchecked(a, b, block_sizes);
        p.validate_dims()?;
        p.spot_check_psd()?;
        Ok(p)
    }

    /// Construction without the PSD probe, for operators derived from an
    /// already validated pencil (deflations, wrappers).
    pub fn new_unchecked(
        a: Arc<dyn SymmetricOperator>,
        b: Arc<dyn SymmetricOperator>,
        block_sizes: BlockLayout,
    ) -> Self {
        Pencil { a, b, block_sizes }
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    fn validate_dims(&self) -> Result<()> {
        if self.a.dim() != self.b.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.a.dim(),
                got: self.b.dim(),
            });
        }
        if self.block_sizes.total() != self.a.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.a.dim(),
                got: self.block_sizes.total(),
            });
        }
        Ok(())
    }

    fn spot_check_psd(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x50d);
        for _ in 0..3 {
            let x = random_unit(&mut rng, self.b.dim());
            let bx = self.b.apply(&x);
            let quad = x.dot(&bx);
            if quad < -1e-10 * bx.norm().max(1.0) {
                return Err(Error::NotPositiveSemiDefinite { value: quad });
            }
        }
        Ok(())
    }
}

/// Iteration parameters for [`loecg`].
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Order of the Krylov space built each outer iteration.
    pub krylov_order: usize,
    /// Convergence threshold on the normalized residual.
    pub tol: f64,
    pub max_iters: usize,
    /// Threshold below which the conjugate direction is dropped.
    pub guard_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            krylov_order: 10,
            tol: 1e-6,
            max_iters: 500,
            guard_tol: 1e-12,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.krylov_order == 0 {
            return Err(Error::InvalidConfig("krylov_order must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if self.tol <= 0.0 || !self.tol.is_finite() {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.guard_tol <= 0.0 || !self.guard_tol.is_finite() {
            return Err(Error::InvalidConfig("guard_tol must be positive".into()));
        }
        if self.guard_tol >= self.tol {
            return Err(Error::InvalidConfig("guard_tol must be below tol".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Converged (or best-effort) top eigenpair.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub rho: f64,
    /// Unit 2-norm eigenvector, sign-fixed so its largest entry is positive.
    pub x: DVector<f64>,
    /// `|A x - rho B x| / (est|A| + |rho| est|B|)`.
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
    /// Rayleigh quotient after each outer iteration, starting value included.
    pub rho_history: Vec<f64>,
}

/// Rough spectral-norm magnitude from 10 power iterations off a seeded start.
///
/// Only the order of magnitude matters: the value scales the residual
/// denominator. A zero operator reports 0; callers substitute 1 there.
pub fn estimate_norm(op: &dyn SymmetricOperator, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = random_unit(&mut rng, op.dim());
    let mut norm = 0.0;
    for _ in 0..10 {
        let v = op.apply(&u);
        norm = v.norm();
        if norm <= f64::MIN_POSITIVE {
            return 0.0;
        }
        u = v / norm;
    }
    norm
}

fn positive_or_one(est: f64) -> f64 {
    if est > 0.0 {
        est
    } else {
        1.0
    }
}

/// Largest eigenpair of the small dense pencil `Am z = rho Bm z`.
///
/// `Bm` is reduced by Cholesky `R'R`, the whitened matrix
/// `R^-T Am R^-1` is eigendecomposed, and the eigenvector is mapped back
/// through `R^-1` and normalized to unit 2-norm. A Cholesky failure is
/// retried once with diagonal jitter `1e-12 tr(Bm)/n`.
pub fn solve_projected(am: &DMatrix<f64>, bm: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let n = am.nrows();
    if am.ncols() != n || bm.nrows() != n || bm.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: bm.nrows(),
        });
    }
    let chol = Cholesky::new(bm.clone())
        .or_else(|| {
            let jitter = 1e-12 * bm.trace() / n as f64;
            Cholesky::new(bm + DMatrix::identity(n, n) * jitter)
        })
        .ok_or(Error::ProjectedSolveFailed)?;
    let l = chol.l();
    let m1 = l
        .solve_lower_triangular(am)
        .ok_or(Error::ProjectedSolveFailed)?;
    let m2 = l
        .solve_lower_triangular(&m1.transpose())
        .ok_or(Error::ProjectedSolveFailed)?;
    let s = (&m2 + m2.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let (idx, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite eigenvalues"))
        .expect("nonempty spectrum");
    let w = eig.eigenvectors.column(idx).into_owned();
    let z = l
        .transpose()
        .solve_upper_triangular(&w)
        .ok_or(Error::ProjectedSolveFailed)?;
    let norm = z.norm();
    if norm == 0.0 {
        return Err(Error::ProjectedSolveFailed);
    }
    Ok((*lambda, z / norm))
}

/// Locally optimal extended conjugate gradient solve of the pencil's top
/// eigenpair.
///
/// Non-convergence within `max_iters` is not an error: the best iterate is
/// returned with `converged = false` and the caller decides policy. A start
/// vector that `B` annihilates is retried with fresh randomness up to 5
/// times before giving up.
pub fn loecg(pencil: &Pencil, config: &SolverConfig) -> Result<EigResult> {
    config.validate()?;
    let d = pencil.dim();
    let a = pencil.a.as_ref();
    let b = pencil.b.as_ref();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut start = None;
    for _ in 0..5 {
        let raw = random_unit(&mut rng, d);
        let bx = b.apply(&raw);
        let n = bx.norm();
        if n > 1e-280 {
            start = Some(bx / n);
            break;
        }
    }
    let mut x1 = start.ok_or(Error::StartNotInRange { attempts: 5 })?;

    // Norm magnitudes for the residual denominator, cached for the whole run.
    let est_a = positive_or_one(estimate_norm(a, config.seed ^ 0x9e3779b97f4a7c15));
    let est_b = positive_or_one(estimate_norm(b, config.seed ^ 0x6a09e667f3bcc909));

    let mut ax1 = a.apply(&x1);
    let mut bx1 = b.apply(&x1);
    let xbx = x1.dot(&bx1);
    if xbx.is_nan() || xbx <= 0.0 {
        return Err(Error::StartNotInRange { attempts: 5 });
    }
    let mut rho = x1.dot(&ax1) / xbx;
    let denom = |rho: f64| est_a + rho.abs() * est_b;
    let resid = |ax: &DVector<f64>, bx: &DVector<f64>, rho: f64| {
        let mut r = ax.clone();
        r.axpy(-rho, bx, 1.0);
        r.norm() / denom(rho)
    };
    let mut residual = resid(&ax1, &bx1, rho);

    let mut x0: DVector<f64> = DVector::zeros(d);
    let mut history = vec![rho];
    let mut iters = 0;

    while residual >= config.tol && iters < config.max_iters {
        iters += 1;
        let (mut w, mut aw, mut bw) = pencil_krylov(a, b, rho, &x1, config.krylov_order);

        // Conjugate direction: previous iterate projected out of the basis.
        let mut p = x0.clone();
        for z in &w {
            let c = z.dot(&p);
            p.axpy(-c, z, 1.0);
        }
        if p.norm() > config.guard_tol {
            for z in &w {
                let c = z.dot(&p);
                p.axpy(-c, z, 1.0);
            }
            let n = p.norm();
            if n > config.guard_tol {
                let p = p / n;
                aw.push(a.apply(&p));
                bw.push(b.apply(&p));
                w.push(p);
            }
        }

        let wmat = DMatrix::from_columns(&w);
        let awmat = DMatrix::from_columns(&aw);
        let bwmat = DMatrix::from_columns(&bw);
        let am = wmat.tr_mul(&awmat);
        let bm = wmat.tr_mul(&bwmat);
        let am = (&am + am.transpose()) * 0.5;
        let bm = (&bm + bm.transpose()) * 0.5;

        let (new_rho, z) = solve_projected(&am, &bm)?;
        x0 = x1;
        x1 = &wmat * &z;
        let n1 = x1.norm();
        x1 /= n1;
        ax1 = (&awmat * &z) / n1;
        bx1 = (&bwmat * &z) / n1;
        rho = new_rho;
        residual = resid(&ax1, &bx1, rho);
        history.push(rho);
    }

    // Deterministic sign: the entry of largest magnitude is made positive.
    let (imax, _) = x1
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).expect("finite entries"))
        .expect("nonempty vector");
    if x1[imax] < 0.0 {
        x1.neg_mut();
    }

    Ok(EigResult {
        rho,
        x: x1,
        residual,
        iters,
        converged: residual < config.tol,
        rho_history: history,
    })
}

/// Basis columns of the shifted Krylov space plus the cached `A z_j` and
/// `B z_j` products, column-aligned.
type KrylovProducts = (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Orthonormal Krylov basis of `A - rho B` from a unit start vector, with the
/// per-column products `A z_j`, `B z_j` captured for reuse in the projected
/// pencil.
fn pencil_krylov(
    a: &dyn SymmetricOperator,
    b: &dyn SymmetricOperator,
    rho: f64,
    start_unit: &DVector<f64>,
    order: usize,
) -> KrylovProducts {
    let mut z = vec![start_unit.clone()];
    let mut az = Vec::with_capacity(order + 1);
    let mut bz = Vec::with_capacity(order + 1);
    let mut scale = 0.0f64;
    for j in 0..order {
        let aj = a.apply(&z[j]);
        let bj = b.apply(&z[j]);
        let mut w = aj.clone();
        w.axpy(-rho, &bj, 1.0);
        az.push(aj);
        bz.push(bj);
        scale = scale.max(w.norm());
        crate::linop::orthogonalize_against(&mut w, &z);
        let beta = w.norm();
        if beta <= BREAKDOWN_TOL * scale {
            break;
        }
        z.push(w / beta);
    }
    while az.len() < z.len() {
        let j = az.len();
        az.push(a.apply(&z[j]));
        bz.push(b.apply(&z[j]));
    }
    (z, az, bz)
}

/// Rank-`l` deflation data in the `B` inner product: basis columns `q_i`
/// with `q_i' B q_j = delta_ij`, stored together with `B q_i`.
pub struct BOrthoDeflation {
    q: DMatrix<f64>,
    bq: DMatrix<f64>,
}

impl BOrthoDeflation {
    pub fn new(q: DMatrix<f64>, bq: DMatrix<f64>) -> Self {
        debug_assert_eq!(q.shape(), bq.shape());
        BOrthoDeflation { q, bq }
    }

    pub fn empty(dim: usize) -> Self {
        BOrthoDeflation {
            q: DMatrix::zeros(dim, 0),
            bq: DMatrix::zeros(dim, 0),
        }
    }

    /// `x - Q (BQ)' x`: the constraint projector onto `{x : q_i' B x = 0}`.
    pub fn project_in(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return x.clone();
        }
        let coeff = self.bq.tr_mul(x);
        let mut y = x.clone();
        y.gemv(-1.0, &self.q, &coeff, 1.0);
        y
    }

    /// `y - BQ Q' y`: the transpose of [`Self::project_in`].
    pub fn project_out(&self, y: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return y.clone();
        }
        let coeff = self.q.tr_mul(y);
        let mut out = y.clone();
        out.gemv(-1.0, &self.bq, &coeff, 1.0);
        out
    }
}

/// Symmetric sandwich `P' X P` of a base operator with the B-orthogonal
/// constraint projector.
struct BDeflatedOp {
    base: Arc<dyn SymmetricOperator>,
    defl: Arc<BOrthoDeflation>,
}

impl SymmetricOperator for BDeflatedOp {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = self.defl.project_in(x);
        let u = self.base.apply(&t);
        self.defl.project_out(&u)
    }
}

/// Top-k generalized eigenvectors of the pencil, extracted by repeated
/// single-vector solves on successively deflated pencils.
pub struct TopKResult {
    /// `d x k` matrix of B-orthonormal eigenvectors in extraction order.
    pub vectors: DMatrix<f64>,
    /// Eigenvalues in extraction (descending) order.
    pub values: Vec<f64>,
    pub results: Vec<EigResult>,
}

/// Successive top eigenvectors, each constrained B-orthogonal to the ones
/// already extracted. Fails with the achieved count when the deflation
/// exhausts the range of `B` before `k` columns.
pub fn gev_topk(pencil: &Pencil, k: usize, config: &SolverConfig) -> Result<TopKResult> {
    let d = pencil.dim();
    if k == 0 || k > d {
        return Err(Error::InvalidK { k, max: d });
    }
    let est_b0 = estimate_norm(pencil.b.as_ref(), config.seed ^ 0xb0);
    let mut qs: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut bqs: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    let mut results = Vec::with_capacity(k);

    for j in 0..k {
        let defl = Arc::new(if qs.is_empty() {
            BOrthoDeflation::empty(d)
        } else {
            BOrthoDeflation::new(DMatrix::from_columns(&qs), DMatrix::from_columns(&bqs))
        });
        let da: Arc<dyn SymmetricOperator> = Arc::new(BDeflatedOp {
            base: pencil.a.clone(),
            defl: defl.clone(),
        });
        let db: Arc<dyn SymmetricOperator> = Arc::new(BDeflatedOp {
            base: pencil.b.clone(),
            defl: defl.clone(),
        });
        let est_db = estimate_norm(db.as_ref(), config.seed ^ (0xd0 + j as u64));
        if est_db <= 1e-10 * est_b0.max(f64::MIN_POSITIVE) {
            return Err(Error::DeflationExhausted {
                achieved: j,
                requested: k,
            });
        }
        let sub = config.clone().with_seed(config.seed.wrapping_add(j as u64));
        let dp = Pencil::new_unchecked(da, db, pencil.block_sizes.clone());
        let res = match loecg(&dp, &sub) {
            Ok(r) => r,
            Err(Error::StartNotInRange { .. }) => {
                return Err(Error::DeflationExhausted {
                    achieved: j,
                    requested: k,
                })
            }
            Err(e) => return Err(e),
        };
        let x = defl.project_in(&res.x);
        let bx = pencil.b.apply(&x);
        let quad = x.dot(&bx);
        if quad <= 1e-14 * est_b0.max(f64::MIN_POSITIVE) * x.norm_squared() {
            return Err(Error::DeflationExhausted {
                achieved: j,
                requested: k,
            });
        }
        let s = quad.sqrt();
        qs.push(x / s);
        bqs.push(bx / s);
        values.push(res.rho);
        results.push(res);
    }

    Ok(TopKResult {
        vectors: DMatrix::from_columns(&qs),
        values,
        results,
    })
}
