//! Desk-scale experimental harness: projection and fusion, classification
//! backends, multi-label metrics, splits, and synthetic data.

mod metrics;
mod mlknn;
mod synth;

pub use metrics::{multilabel_metrics, MetricsReport, METRIC_NAMES};
pub use mlknn::{mlknn_fit, mlknn_predict, MlknnModel, MlknnPrediction};
pub use synth::synth_multiview;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::MultiViewDataset;
use crate::osave::ProjectionSet;

/// Disjoint train/test index sets drawn from a seeded shuffle.
#[derive(Debug, Clone)]
pub struct Split {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

impl Split {
    /// Shuffle `0..n` and take the first `ratio` fraction (at least one
    /// sample, at most `n - 1`) as the training set.
    pub fn new(n: usize, train_ratio: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDataset(
                "need at least 2 samples to split".into(),
            ));
        }
        if !(train_ratio > 0.0 && train_ratio < 1.0) {
            return Err(Error::InvalidConfig(
                "split ratio must lie strictly between 0 and 1".into(),
            ));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let take = ((train_ratio * n as f64).round() as usize).clamp(1, n - 1);
        let train_idx = idx[..take].to_vec();
        let test_idx = idx[take..].to_vec();
        Ok(Split {
            train_idx,
            test_idx,
            seed,
        })
    }
}

/// Serial feature fusion: stack `P_s' x_i` over views for the selected
/// samples, producing a `(v k) x |idx|` matrix.
pub fn project_fuse(
    p: &ProjectionSet,
    ds: &MultiViewDataset,
    idx: &[usize],
) -> Result<DMatrix<f64>> {
    if p.view_count() != ds.num_views() {
        return Err(Error::DimensionMismatch {
            expected: ds.num_views(),
            got: p.view_count(),
        });
    }
    let n = ds.n();
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidDataset(format!(
            "sample index {bad} out of range for {n} samples"
        )));
    }
    let k = p.k();
    let v = p.view_count();
    let mut fused = DMatrix::zeros(v * k, idx.len());
    for (s, mat) in p.matrices().iter().enumerate() {
        if mat.nrows() != ds.dim(s) {
            return Err(Error::DimensionMismatch {
                expected: ds.dim(s),
                got: mat.nrows(),
            });
        }
        let selected = ds.view(s).select_columns(idx);
        let proj = mat.tr_mul(&selected);
        fused.view_mut((s * k, 0), (k, idx.len())).copy_from(&proj);
    }
    Ok(fused)
}

/// 1-nearest-neighbor prediction with Euclidean distance; ties broken by
/// the lowest training index.
pub fn knn1(
    train: &DMatrix<f64>,
    train_labels: &[usize],
    test: &DMatrix<f64>,
) -> Result<Vec<usize>> {
    if train.ncols() == 0 {
        return Err(Error::InvalidDataset("empty training set".into()));
    }
    if train.ncols() != train_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: train.ncols(),
            got: train_labels.len(),
        });
    }
    if train.nrows() != test.nrows() {
        return Err(Error::DimensionMismatch {
            expected: train.nrows(),
            got: test.nrows(),
        });
    }
    let mut out = Vec::with_capacity(test.ncols());
    for j in 0..test.ncols() {
        let x = test.column(j);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for i in 0..train.ncols() {
            let d = (train.column(i) - x).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        out.push(train_labels[best]);
    }
    Ok(out)
}

/// Fraction of exact label matches.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / pred.len() as f64
}

/// Top-k principal components of `x` (features x samples) and the centered
/// projection of the data onto them.
///
/// Components are orthonormal covariance eigenvectors in descending
/// variance order. Asking for more components than the covariance rank is
/// an error naming the achieved rank.
pub fn pca_project(x: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = x.nrows();
    let n = x.ncols();
    if k == 0 || k > d {
        return Err(Error::InvalidK { k, max: d });
    }
    if n == 0 {
        return Err(Error::InvalidDataset("pca needs samples".into()));
    }
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = (&centered * centered.transpose()) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("finite eigenvalues")
    });
    let lam_max = eig.eigenvalues[order[0]].max(0.0);
    let rank_tol = lam_max * 1e-12 * d as f64;
    let rank = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > rank_tol)
        .count();
    if k > rank {
        return Err(Error::RankDeficient { k, rank });
    }
    let mut components = DMatrix::zeros(d, k);
    for (j, &i) in order.iter().take(k).enumerate() {
        components.set_column(j, &eig.eigenvectors.column(i));
    }
    let projected = components.tr_mul(&centered);
    Ok((components, projected))
}

/// Argmax class index per one-hot column.
pub fn class_labels_of(ds: &MultiViewDataset) -> Result<Vec<usize>> {
    ds.class_indices()
}

/// Project arbitrary feature columns onto PCA components learned elsewhere.
pub fn pca_transform(
    components: &DMatrix<f64>,
    mean: &DVector<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= mean;
    }
    components.tr_mul(&centered)
}
