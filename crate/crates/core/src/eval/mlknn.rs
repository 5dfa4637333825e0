//! ML-kNN multi-label backend classifier.
//!
//! Per label, a smoothed prior and two likelihood tables over neighbor-count
//! events (0..=k relevant neighbors) are estimated from the training set;
//! prediction is maximum-a-posteriori thresholding, with the posterior
//! membership probability reported as the score.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Fitted ML-kNN tables plus the training data needed at query time.
pub struct MlknnModel {
    train: DMatrix<f64>,
    k_nn: usize,
    /// Smoothed `P(H_r)` per label.
    prior: Vec<f64>,
    /// `P(C = j | H_r)` per label `r` and neighbor count `j` in `0..=k`.
    cond_true: Vec<Vec<f64>>,
    /// `P(C = j | not H_r)`.
    cond_false: Vec<Vec<f64>>,
    train_labels: DMatrix<f64>,
}

/// Posterior scores and thresholded predictions, both `c x n_test`.
pub struct MlknnPrediction {
    pub scores: DMatrix<f64>,
    pub predictions: DMatrix<f64>,
}

/// Indices of the `k` nearest training columns to `x`, excluding `skip`
/// (pass `usize::MAX` to keep all). Ties resolve to the lowest index.
fn k_nearest(
    train: &DMatrix<f64>,
    x: nalgebra::DVectorView<f64>,
    k: usize,
    skip: usize,
) -> Vec<usize> {
    let mut dists: Vec<(f64, usize)> = (0..train.ncols())
        .filter(|&i| i != skip)
        .map(|i| ((train.column(i) - x).norm_squared(), i))
        .collect();
    dists.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite distances")
            .then(a.1.cmp(&b.1))
    });
    dists.truncate(k);
    dists.into_iter().map(|(_, i)| i).collect()
}

/// Estimate the ML-kNN tables from fused training features (columns are
/// samples) and a binary label matrix.
pub fn mlknn_fit(
    train: &DMatrix<f64>,
    train_labels: &DMatrix<f64>,
    k_nn: usize,
    smoothing: f64,
) -> Result<MlknnModel> {
    let n = train.ncols();
    let c = train_labels.nrows();
    if train_labels.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: train_labels.ncols(),
        });
    }
    if k_nn == 0 || k_nn >= n {
        return Err(Error::InvalidConfig(format!(
            "k_nn = {k_nn} must satisfy 1 <= k_nn < train size {n}"
        )));
    }
    if smoothing.is_nan() || smoothing < 0.0 {
        return Err(Error::InvalidConfig("smoothing must be nonnegative".into()));
    }

    let s = smoothing;
    let nf = n as f64;
    let prior: Vec<f64> = (0..c)
        .map(|r| {
            let members: f64 = train_labels.row(r).sum();
            (s + members) / (2.0 * s + nf)
        })
        .collect();

    // Neighbor-count events over the training set (each sample against the
    // rest of the training set).
    let mut count_true = vec![vec![0usize; k_nn + 1]; c];
    let mut count_false = vec![vec![0usize; k_nn + 1]; c];
    for i in 0..n {
        let neighbors = k_nearest(train, train.column(i), k_nn, i);
        for r in 0..c {
            let delta = neighbors
                .iter()
                .filter(|&&j| train_labels[(r, j)] == 1.0)
                .count();
            if train_labels[(r, i)] == 1.0 {
                count_true[r][delta] += 1;
            } else {
                count_false[r][delta] += 1;
            }
        }
    }

    let table = |counts: &Vec<usize>| -> Vec<f64> {
        let total: usize = counts.iter().sum();
        counts
            .iter()
            .map(|&cj| (s + cj as f64) / (s * (k_nn + 1) as f64 + total as f64))
            .collect()
    };
    let cond_true: Vec<Vec<f64>> = count_true.iter().map(table).collect();
    let cond_false: Vec<Vec<f64>> = count_false.iter().map(table).collect();

    Ok(MlknnModel {
        train: train.clone(),
        k_nn,
        prior,
        cond_true,
        cond_false,
        train_labels: train_labels.clone(),
    })
}

/// Score and threshold test instances (columns) against the fitted tables.
pub fn mlknn_predict(model: &MlknnModel, test: &DMatrix<f64>) -> Result<MlknnPrediction> {
    if test.nrows() != model.train.nrows() {
        return Err(Error::DimensionMismatch {
            expected: model.train.nrows(),
            got: test.nrows(),
        });
    }
    let c = model.prior.len();
    let m = test.ncols();
    let mut scores = DMatrix::zeros(c, m);
    let mut predictions = DMatrix::zeros(c, m);
    for j in 0..m {
        let neighbors = k_nearest(&model.train, test.column(j), model.k_nn, usize::MAX);
        for r in 0..c {
            let count = neighbors
                .iter()
                .filter(|&&i| model.train_labels[(r, i)] == 1.0)
                .count();
            let post_true = model.prior[r] * model.cond_true[r][count];
            let post_false = (1.0 - model.prior[r]) * model.cond_false[r][count];
            let total = post_true + post_false;
            scores[(r, j)] = if total > 0.0 {
                post_true / total
            } else {
                model.prior[r]
            };
            if post_true > post_false {
                predictions[(r, j)] = 1.0;
            }
        }
    }
    Ok(MlknnPrediction {
        scores,
        predictions,
    })
}
