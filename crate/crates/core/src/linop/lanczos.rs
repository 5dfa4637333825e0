//! Symmetric Lanczos basis generation with full reorthogonalization.

use nalgebra::{DMatrix, DVector};

use super::{SymmetricOperator, BREAKDOWN_TOL};
use crate::error::{Error, Result};

/// Orthonormal basis of the Krylov space `span{x, A x, ..., A^order x}`.
///
/// Every new direction is reorthogonalized against all previous columns
/// (two passes), so `Z' Z = I` holds to working precision regardless of the
/// spectrum. The iteration truncates early when the next residual drops
/// below `1e-12` times a running estimate of the operator scale, so the
/// column count is at most `order + 1` and can be smaller on breakdown.
pub fn lanczos_basis(
    op: &dyn SymmetricOperator,
    start: &DVector<f64>,
    order: usize,
) -> Result<DMatrix<f64>> {
    let norm = start.norm();
    if norm == 0.0 {
        return Err(Error::ZeroStart);
    }
    let mut cols: Vec<DVector<f64>> = vec![start / norm];
    let mut scale = 0.0f64;
    for j in 0..order {
        let mut w = op.apply(&cols[j]);
        scale = scale.max(w.norm());
        orthogonalize_against(&mut w, &cols);
        let beta = w.norm();
        if beta <= BREAKDOWN_TOL * scale {
            break;
        }
        cols.push(w / beta);
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Two full Gram-Schmidt passes of `w` against each column in `basis`.
pub(crate) fn orthogonalize_against(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for z in basis {
            let c = z.dot(w);
            w.axpy(-c, z, 1.0);
        }
    }
}
