//! Dense oracles shared by the integration and acceptance suites.
//!
//! Everything here recomputes results with explicit dense linear algebra,
//! independent of the matrix-free code paths under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use omvsl::linop::SymmetricOperator;

pub fn seeded_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn seeded_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Assemble the dense matrix of an abstract operator by probing with basis
/// vectors.
pub fn assemble(op: &dyn SymmetricOperator) -> DMatrix<f64> {
    let d = op.dim();
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        m.set_column(j, &op.apply(&e));
    }
    m
}

/// Orthonormal basis of the range of a symmetric PSD matrix.
pub fn range_basis(b: &DMatrix<f64>) -> DMatrix<f64> {
    let d = b.nrows();
    let eig = SymmetricEigen::new(b.clone());
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..d)
        .filter(|&i| eig.eigenvalues[i] > lam_max * 1e-10)
        .collect();
    let mut u = DMatrix::zeros(d, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        u.set_column(j, &eig.eigenvectors.column(i));
    }
    u
}

/// All eigenvalues (descending) and eigenvectors of the pencil `(A, B)`
/// restricted to the range of `B`, via reduction to the range basis and a
/// whitened dense eigendecomposition. Eigenvectors are unit 2-norm.
pub fn range_restricted_gev(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let u = range_basis(b);
    let ar = u.tr_mul(&(a * &u));
    let br = u.tr_mul(&(b * &u));
    let ar = (&ar + ar.transpose()) * 0.5;
    let br = (&br + br.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(br).expect("reduced B is positive definite");
    let l = chol.l();
    let m1 = l.solve_lower_triangular(&ar).expect("non-singular L");
    let m2 = l
        .solve_lower_triangular(&m1.transpose())
        .expect("non-singular L");
    let s = (&m2 + m2.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let r = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let mut values = Vec::with_capacity(r);
    let mut vectors = DMatrix::zeros(a.nrows(), r);
    for (col, &i) in order.iter().enumerate() {
        values.push(eig.eigenvalues[i]);
        let w = eig.eigenvectors.column(i).into_owned();
        let z = l
            .transpose()
            .solve_upper_triangular(&w)
            .expect("non-singular L");
        let x = &u * z;
        let x = &x / x.norm();
        vectors.set_column(col, &x);
    }
    (values, vectors)
}

/// Top eigenpair of the range-restricted pencil.
pub fn top_range_restricted(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let (values, vectors) = range_restricted_gev(a, b);
    (values[0], vectors.column(0).into_owned())
}

/// Random semi-definite pencil with `B = C' C` of the given rank and
/// `A = C' M C` so that the range condition holds by construction.
pub fn random_pencil(seed: u64, d: usize, rank: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = seeded_matrix(&mut rng, rank, d);
    let g = seeded_matrix(&mut rng, rank, rank);
    let m = (&g + g.transpose()) * 0.5;
    let b = c.tr_mul(&c);
    let a = c.transpose() * m * &c;
    let a = (&a + a.transpose()) * 0.5;
    (a, b)
}

/// Norm of the component of `x` outside the range of `b`.
pub fn null_space_leakage(b: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let u = range_basis(b);
    (x - &u * u.tr_mul(x)).norm()
}

/// Brute-force multi-label metrics: every count through explicit pairwise
/// loops and the counting definition of ranks, mirroring the pinned tie and
/// skip conventions.
pub fn bruteforce_metrics(
    scores: &DMatrix<f64>,
    predictions: &DMatrix<f64>,
    truth: &DMatrix<f64>,
) -> omvsl::eval::MetricsReport {
    let (c, m) = scores.shape();
    let rank_of = |col: usize, r: usize| -> usize {
        let mut rank = 1usize;
        for j in 0..c {
            if scores[(j, col)] > scores[(r, col)]
                || (j < r && scores[(j, col)] == scores[(r, col)])
            {
                rank += 1;
            }
        }
        rank
    };
    let mut hamming_sum = 0.0;
    let mut coverage_sum = 0.0;
    let mut rl_sum = 0.0;
    let mut oe_sum = 0.0;
    let mut ap_sum = 0.0;
    let mut counted = 0usize;
    for i in 0..m {
        let relevant: Vec<usize> = (0..c).filter(|&r| truth[(r, i)] == 1.0).collect();
        let irrelevant: Vec<usize> = (0..c).filter(|&r| truth[(r, i)] == 0.0).collect();
        let mut mism = 0usize;
        for r in 0..c {
            if (predictions[(r, i)] != 0.0) != (truth[(r, i)] != 0.0) {
                mism += 1;
            }
        }
        hamming_sum += mism as f64 / c as f64;
        let max_rank = relevant.iter().map(|&r| rank_of(i, r)).max().unwrap_or(0);
        coverage_sum += if max_rank == 0 {
            0.0
        } else {
            (max_rank - 1) as f64
        };
        if relevant.is_empty() || irrelevant.is_empty() {
            continue;
        }
        counted += 1;
        let mut top = 0usize;
        for r in 0..c {
            if rank_of(i, r) == 1 {
                top = r;
            }
        }
        oe_sum += if truth[(top, i)] == 1.0 { 0.0 } else { 1.0 };
        let mut wrong = 0usize;
        let mut ties = 0usize;
        for &r in &relevant {
            for &j in &irrelevant {
                if scores[(r, i)] < scores[(j, i)] {
                    wrong += 1;
                } else if scores[(r, i)] == scores[(j, i)] {
                    ties += 1;
                }
            }
        }
        rl_sum += (wrong as f64 + 0.5 * ties as f64) / (relevant.len() * irrelevant.len()) as f64;
        let mut ap_i = 0.0;
        for &r in &relevant {
            let rr = rank_of(i, r);
            let mut leq = 0usize;
            for &r2 in &relevant {
                if rank_of(i, r2) <= rr {
                    leq += 1;
                }
            }
            ap_i += leq as f64 / rr as f64;
        }
        ap_sum += ap_i / relevant.len() as f64;
    }
    let (ranking_loss, one_error, average_precision) = if counted > 0 {
        (
            rl_sum / counted as f64,
            oe_sum / counted as f64,
            ap_sum / counted as f64,
        )
    } else {
        (0.0, 0.0, 1.0)
    };
    omvsl::eval::MetricsReport {
        hamming_loss: hamming_sum / m as f64,
        ranking_loss,
        one_error,
        coverage: coverage_sum / m as f64,
        average_precision,
    }
}
