//! Seeded synthetic multi-view data generation.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{LabelKind, MultiViewDataset};

const CENTER_SPREAD: f64 = 3.0;
/// Variance amplification of the per-view nuisance noise directions.
const NUISANCE_AMP: f64 = 3.0;
const NUISANCE_DIRS: usize = 3;

/// Draw a labeled multi-view dataset: shared latent class centers, one
/// random linear map per view, and per-view additive Gaussian noise.
///
/// The noise is view-specific: on top of an isotropic component, each view
/// carries a few amplified class-irrelevant directions of its own, so
/// unsupervised variance-seeking baselines have something to be fooled by.
/// Samples are grouped by class (`per_class` consecutive columns each) and
/// the whole draw is deterministic under the seed.
pub fn synth_multiview(
    seed: u64,
    views: usize,
    classes: usize,
    per_class: usize,
    dims: &[usize],
    noise: f64,
) -> Result<MultiViewDataset> {
    if views == 0 || classes == 0 || per_class == 0 {
        return Err(Error::InvalidConfig(
            "views, classes, and per_class must be positive".into(),
        ));
    }
    if dims.len() != views {
        return Err(Error::DimensionMismatch {
            expected: views,
            got: dims.len(),
        });
    }
    if dims.contains(&0) {
        return Err(Error::InvalidConfig(
            "view dimensions must be positive".into(),
        ));
    }
    if noise < 0.0 || !noise.is_finite() {
        return Err(Error::InvalidConfig(
            "noise must be a nonnegative real".into(),
        ));
    }

    let latent = classes;
    let n = classes * per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let centers = DMatrix::from_fn(latent, classes, |_, _| {
        CENTER_SPREAD * rng.sample::<f64, _>(StandardNormal)
    });
    let maps: Vec<DMatrix<f64>> = dims
        .iter()
        .map(|&d| {
            DMatrix::from_fn(d, latent, |_, _| {
                rng.sample::<f64, _>(StandardNormal) / (latent as f64).sqrt()
            })
        })
        .collect();
    // Unit-column nuisance bases, one per view.
    let nuisance: Vec<DMatrix<f64>> = dims
        .iter()
        .map(|&d| {
            let q = NUISANCE_DIRS.min(d);
            let mut basis = DMatrix::from_fn(d, q, |_, _| rng.sample::<f64, _>(StandardNormal));
            for mut col in basis.column_iter_mut() {
                let norm = col.norm();
                col /= norm;
            }
            basis
        })
        .collect();

    let mut xs: Vec<DMatrix<f64>> = dims.iter().map(|&d| DMatrix::zeros(d, n)).collect();
    for (s, map) in maps.iter().enumerate() {
        let q = nuisance[s].ncols();
        for i in 0..n {
            let class = i / per_class;
            let mut col = map * centers.column(class);
            if noise > 0.0 {
                col +=
                    DVector::from_fn(dims[s], |_, _| noise * rng.sample::<f64, _>(StandardNormal));
                let xi = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
                col += &nuisance[s] * xi * (NUISANCE_AMP * noise);
            }
            xs[s].set_column(i, &col);
        }
    }

    let labels = DMatrix::from_fn(
        classes,
        n,
        |r, i| if i / per_class == r { 1.0 } else { 0.0 },
    );
    MultiViewDataset::new(xs, Some(labels), LabelKind::MulticlassOnehot)
}
