//! Dataset statistics as matrix-free operators and the model registry.
//!
//! A dataset holds per-view feature matrices with samples as columns, so
//! `X (centered X' x)` is the natural apply order for every covariance-like
//! product. The registry turns a model specification into a pencil: a full
//! coupling grid for the correlation/discriminant terms and a block-diagonal
//! constraint operator, optionally ridge-regularized.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigsolve::Pencil;
use crate::error::{Error, Result};
use crate::linop::{
    block_diag_op, block_full_op, subtract_mean, BlockGrid, BlockLayout, BlockOp, GramOperator,
    RegularizedOp, ScaledBlock, SymBlock, SymmetricOperator,
};

/// Interpretation of the label matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    MulticlassOnehot,
    Multilabel,
    None,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LabelKind::MulticlassOnehot => "multiclass_onehot",
            LabelKind::Multilabel => "multilabel",
            LabelKind::None => "none",
        };
        f.write_str(s)
    }
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiclass_onehot" | "multiclass-onehot" | "onehot" => Ok(LabelKind::MulticlassOnehot),
            "multilabel" => Ok(LabelKind::Multilabel),
            "none" => Ok(LabelKind::None),
            other => Err(Error::InvalidLabels(format!(
                "unknown label kind {other:?}"
            ))),
        }
    }
}

/// `v` per-view feature matrices sharing `n` samples (as columns), plus an
/// optional label matrix.
#[derive(Debug, Clone)]
pub struct MultiViewDataset {
    views: Vec<Arc<DMatrix<f64>>>,
    labels: Option<Arc<DMatrix<f64>>>,
    label_kind: LabelKind,
}

impl MultiViewDataset {
    pub fn new(
        views: Vec<DMatrix<f64>>,
        labels: Option<DMatrix<f64>>,
        label_kind: LabelKind,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::InvalidDataset(
                "dataset needs at least one view".into(),
            ));
        }
        let n = views[0].ncols();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no samples".into()));
        }
        for (s, x) in views.iter().enumerate() {
            if x.ncols() != n {
                return Err(Error::InvalidDataset(format!(
                    "view {s} has {} samples, expected {n}",
                    x.ncols()
                )));
            }
            if x.nrows() == 0 {
                return Err(Error::InvalidDataset(format!("view {s} has zero features")));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "view {s} contains a non-finite entry"
                )));
            }
        }
        match (&labels, label_kind) {
            (None, LabelKind::None) => {}
            (None, _) => {
                return Err(Error::InvalidLabels(
                    "label kind given without a label matrix".into(),
                ))
            }
            (Some(_), LabelKind::None) => {
                return Err(Error::InvalidLabels(
                    "label matrix given with kind none".into(),
                ))
            }
            (Some(y), kind) => {
                if y.ncols() != n {
                    return Err(Error::InvalidLabels(format!(
                        "label matrix has {} samples, expected {n}",
                        y.ncols()
                    )));
                }
                if y.nrows() == 0 {
                    return Err(Error::InvalidLabels("label matrix has zero rows".into()));
                }
                if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidLabels(
                        "label entries must be exactly 0 or 1".into(),
                    ));
                }
                if kind == LabelKind::MulticlassOnehot {
                    for i in 0..n {
                        let sum: f64 = y.column(i).sum();
                        if sum != 1.0 {
                            return Err(Error::InvalidLabels(format!(
                                "sample {i} has one-hot column sum {sum}, expected 1"
                            )));
                        }
                    }
                }
            }
        }
        Ok(MultiViewDataset {
            views: views.into_iter().map(Arc::new).collect(),
            labels: labels.map(Arc::new),
            label_kind,
        })
    }

    pub fn n(&self) -> usize {
        self.views[0].ncols()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.as_ref().map_or(0, |y| y.nrows())
    }

    pub fn dim(&self, s: usize) -> usize {
        self.views[s].nrows()
    }

    pub fn view(&self, s: usize) -> &Arc<DMatrix<f64>> {
        &self.views[s]
    }

    pub fn labels(&self) -> Option<&Arc<DMatrix<f64>>> {
        self.labels.as_ref()
    }

    pub fn label_kind(&self) -> LabelKind {
        self.label_kind
    }

    /// Class index per sample, for one-hot labels.
    pub fn class_indices(&self) -> Result<Vec<usize>> {
        let y = self.require_labels("class_indices", "one-hot")?;
        if self.label_kind != LabelKind::MulticlassOnehot {
            return Err(Error::InvalidLabels(
                "class indices need one-hot labels".into(),
            ));
        }
        Ok((0..self.n())
            .map(|i| {
                y.column(i)
                    .iter()
                    .position(|&v| v == 1.0)
                    .expect("validated one-hot column")
            })
            .collect())
    }

    fn require_labels(&self, kind: &str, needed: &str) -> Result<&Arc<DMatrix<f64>>> {
        self.labels.as_ref().ok_or_else(|| Error::LabelsRequired {
            kind: kind.into(),
            needed: needed.into(),
        })
    }

    /// Column subset of all views (and labels), in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<MultiViewDataset> {
        let n = self.n();
        if idx.is_empty() {
            return Err(Error::InvalidDataset("empty subset".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidDataset(format!(
                "subset index {bad} out of range for {n} samples"
            )));
        }
        let views = self
            .views
            .iter()
            .map(|x| x.select_columns(idx))
            .collect::<Vec<_>>();
        let labels = self.labels.as_ref().map(|y| y.select_columns(idx));
        MultiViewDataset::new(views, labels, self.label_kind)
    }
}

/// Class counts and the label-derived projectors for one-hot labels.
pub struct LabelOperators {
    counts: Vec<f64>,
    class_of: Vec<usize>,
}

impl LabelOperators {
    pub fn new(ds: &MultiViewDataset) -> Result<Self> {
        let class_of = ds.class_indices()?;
        let c = ds.num_labels();
        let mut counts = vec![0.0; c];
        for &r in &class_of {
            counts[r] += 1.0;
        }
        if counts.contains(&0.0) {
            return Err(Error::InvalidLabels("empty class in one-hot labels".into()));
        }
        Ok(LabelOperators { counts, class_of })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// `Q x`: replace each entry by the mean of `x` over its sample's class.
    pub fn apply_q(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.class_of.len(), "apply_q dimension");
        let mut sums = vec![0.0; self.counts.len()];
        for (i, &r) in self.class_of.iter().enumerate() {
            sums[r] += x[i];
        }
        for (s, n) in sums.iter_mut().zip(&self.counts) {
            *s /= n;
        }
        DVector::from_fn(x.len(), |i, _| sums[self.class_of[i]])
    }

    /// Action of the class-center coupling `A = Y' S^-1 H_c S^-1 Y`,
    /// computed through class sums, per-class scaling, centering over
    /// classes, per-class scaling, and broadcast. The `n x n` matrix is
    /// never formed.
    pub fn apply_coupling(&self, z: &DVector<f64>) -> DVector<f64> {
        assert_eq!(z.len(), self.class_of.len(), "coupling dimension");
        let c = self.counts.len();
        let mut u = DVector::zeros(c);
        for (i, &r) in self.class_of.iter().enumerate() {
            u[r] += z[i];
        }
        for r in 0..c {
            u[r] /= self.counts[r];
        }
        subtract_mean(&mut u);
        for r in 0..c {
            u[r] /= self.counts[r];
        }
        DVector::from_fn(z.len(), |i, _| u[self.class_of[i]])
    }
}

/// Sample cross-covariance `C_st = (1/n) X_s H X_t'` as a Gram operator.
pub fn cross_cov_block(ds: &MultiViewDataset, s: usize, t: usize) -> GramOperator {
    cross_cov_of(ds.view(s).clone(), ds.view(t).clone(), ds.n())
}

fn cross_cov_of(left: Arc<DMatrix<f64>>, right: Arc<DMatrix<f64>>, n: usize) -> GramOperator {
    let scale = 1.0 / n as f64;
    if Arc::ptr_eq(&left, &right) {
        GramOperator::symmetric(left, true, scale)
    } else {
        GramOperator::new(left, right, true, scale).expect("shared sample count")
    }
}

enum ScatterKind {
    Between,
    Within,
}

/// Between- or within-class scatter `X (Q - 11'/n) X'` / `X (I - Q) X'`.
pub struct ScatterOp {
    x: Arc<DMatrix<f64>>,
    labels: Arc<LabelOperators>,
    kind: ScatterKind,
}

impl SymmetricOperator for ScatterOp {
    fn dim(&self) -> usize {
        self.x.nrows()
    }

    fn apply(&self, input: &DVector<f64>) -> DVector<f64> {
        let z = self.x.tr_mul(input);
        let w = match self.kind {
            ScatterKind::Between => {
                let mut q = self.labels.apply_q(&z);
                let mean = z.sum() / z.len() as f64;
                for v in q.iter_mut() {
                    *v -= mean;
                }
                q
            }
            ScatterKind::Within => &z - self.labels.apply_q(&z),
        };
        &*self.x * w
    }
}

/// `S_b = X (Q - 11'/n) X'`, the between-class scatter.
pub fn between_scatter(ds: &MultiViewDataset, s: usize) -> Result<ScatterOp> {
    Ok(ScatterOp {
        x: ds.view(s).clone(),
        labels: Arc::new(LabelOperators::new(ds)?),
        kind: ScatterKind::Between,
    })
}

/// `S_w = X (I - Q) X'`, the within-class scatter.
pub fn within_scatter(ds: &MultiViewDataset, s: usize) -> Result<ScatterOp> {
    Ok(ScatterOp {
        x: ds.view(s).clone(),
        labels: Arc::new(LabelOperators::new(ds)?),
        kind: ScatterKind::Within,
    })
}

fn between_scatter_with(x: Arc<DMatrix<f64>>, labels: Arc<LabelOperators>) -> ScatterOp {
    ScatterOp {
        x,
        labels,
        kind: ScatterKind::Between,
    }
}

fn within_scatter_with(x: Arc<DMatrix<f64>>, labels: Arc<LabelOperators>) -> ScatterOp {
    ScatterOp {
        x,
        labels,
        kind: ScatterKind::Within,
    }
}

/// Class-center coupling block `X_s A X_t'` with
/// `A = Y' S^-1 H_c S^-1 Y`.
pub struct MvmdaBlock {
    xs: Arc<DMatrix<f64>>,
    xt: Arc<DMatrix<f64>>,
    labels: Arc<LabelOperators>,
}

impl BlockOp for MvmdaBlock {
    fn nrows(&self) -> usize {
        self.xs.nrows()
    }

    fn ncols(&self) -> usize {
        self.xt.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = self.xt.tr_mul(x);
        let w = self.labels.apply_coupling(&z);
        &*self.xs * w
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let z = self.xs.tr_mul(y);
        let w = self.labels.apply_coupling(&z);
        &*self.xt * w
    }
}

/// Coupling block of the class-center separation objective.
pub fn mvmda_coupling(ds: &MultiViewDataset, s: usize, t: usize) -> Result<MvmdaBlock> {
    Ok(MvmdaBlock {
        xs: ds.view(s).clone(),
        xt: ds.view(t).clone(),
        labels: Arc::new(LabelOperators::new(ds)?),
    })
}

fn mvmda_with(
    xs: Arc<DMatrix<f64>>,
    xt: Arc<DMatrix<f64>>,
    labels: Arc<LabelOperators>,
) -> MvmdaBlock {
    MvmdaBlock { xs, xt, labels }
}

/// Label-alignment block `X H Y' Y H X'`, applied factored with only a
/// `c`-length intermediate per label pass.
pub struct HsicOp {
    x: Arc<DMatrix<f64>>,
    y: Arc<DMatrix<f64>>,
}

impl SymmetricOperator for HsicOp {
    fn dim(&self) -> usize {
        self.x.nrows()
    }

    fn apply(&self, input: &DVector<f64>) -> DVector<f64> {
        let mut z = self.x.tr_mul(input);
        subtract_mean(&mut z);
        let w = &*self.y * z;
        let mut u = self.y.tr_mul(&w);
        subtract_mean(&mut u);
        &*self.x * u
    }
}

/// Alignment between view `s` and the label kernel.
pub fn hsic_block(ds: &MultiViewDataset, s: usize) -> Result<HsicOp> {
    let y = ds.require_labels("hsic", "multilabel or one-hot")?.clone();
    Ok(HsicOp {
        x: ds.view(s).clone(),
        y,
    })
}

/// The model catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ogma,
    Omlda,
    Omvmda,
    Om2cca,
    Omcca,
    Ohsic,
    GevGma,
    GevMlda,
    GevMvmda,
    GevMcca,
    HsicGev,
}

impl ModelKind {
    pub const ALL: [ModelKind; 11] = [
        ModelKind::Ogma,
        ModelKind::Omlda,
        ModelKind::Omvmda,
        ModelKind::Om2cca,
        ModelKind::Omcca,
        ModelKind::Ohsic,
        ModelKind::GevGma,
        ModelKind::GevMlda,
        ModelKind::GevMvmda,
        ModelKind::GevMcca,
        ModelKind::HsicGev,
    ];

    /// Kinds solved by the orthogonal successive-approximation driver (the
    /// rest go through the summed-constraint generalized eigensolver).
    pub fn is_orthogonal(self) -> bool {
        matches!(
            self,
            ModelKind::Ogma
                | ModelKind::Omlda
                | ModelKind::Omvmda
                | ModelKind::Om2cca
                | ModelKind::Omcca
                | ModelKind::Ohsic
        )
    }

    pub fn ignores_alpha(self) -> bool {
        matches!(
            self,
            ModelKind::Omvmda
                | ModelKind::GevMvmda
                | ModelKind::Om2cca
                | ModelKind::Omcca
                | ModelKind::GevMcca
        )
    }

    fn family(self) -> ModelFamily {
        match self {
            ModelKind::Ogma | ModelKind::GevGma => ModelFamily::Gma,
            ModelKind::Omlda | ModelKind::GevMlda => ModelFamily::Mlda,
            ModelKind::Omvmda | ModelKind::GevMvmda => ModelFamily::Mvmda,
            ModelKind::Om2cca => ModelFamily::Mcca { label_view: true },
            ModelKind::Omcca => ModelFamily::Mcca { label_view: false },
            ModelKind::GevMcca => ModelFamily::McccaBaseline,
            ModelKind::Ohsic | ModelKind::HsicGev => ModelFamily::Hsic,
        }
    }
}

enum ModelFamily {
    Gma,
    Mlda,
    Mvmda,
    Mcca {
        label_view: bool,
    },
    /// The ratio-trace MCCA baseline: labels join as the extra view when
    /// present, otherwise plain multiset correlation.
    McccaBaseline,
    Hsic,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Ogma => "ogma",
            ModelKind::Omlda => "omlda",
            ModelKind::Omvmda => "omvmda",
            ModelKind::Om2cca => "om2cca",
            ModelKind::Omcca => "omcca",
            ModelKind::Ohsic => "ohsic",
            ModelKind::GevGma => "gev-gma",
            ModelKind::GevMlda => "gev-mlda",
            ModelKind::GevMvmda => "gev-mvmda",
            ModelKind::GevMcca => "gev-mcca",
            ModelKind::HsicGev => "hsic-gev",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "ogma" => Ok(ModelKind::Ogma),
            "omlda" => Ok(ModelKind::Omlda),
            "omvmda" => Ok(ModelKind::Omvmda),
            "om2cca" => Ok(ModelKind::Om2cca),
            "omcca" => Ok(ModelKind::Omcca),
            "ohsic" => Ok(ModelKind::Ohsic),
            "gev-gma" => Ok(ModelKind::GevGma),
            "gev-mlda" => Ok(ModelKind::GevMlda),
            "gev-mvmda" => Ok(ModelKind::GevMvmda),
            "gev-mcca" => Ok(ModelKind::GevMcca),
            "hsic-gev" => Ok(ModelKind::HsicGev),
            other => Err(Error::InvalidConfig(format!(
                "unknown model kind {other:?}"
            ))),
        }
    }
}

/// A model selection: kind plus its scalar knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Uniform weight on the pairwise cross-covariance terms.
    pub alpha: f64,
    /// Ridge added to every constraint block; 0 disables regularization.
    pub epsilon: f64,
    /// Number of projection columns per view.
    pub k: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, alpha: f64, epsilon: f64, k: usize) -> Result<Self> {
        let spec = ModelSpec {
            kind,
            alpha,
            epsilon,
            k,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(
                "alpha must be a nonnegative real".into(),
            ));
        }
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(
                "epsilon must be a nonnegative real".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        Ok(())
    }
}

/// Block sizes and bookkeeping of an instantiated model.
#[derive(Debug, Clone, Serialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub alpha: f64,
    pub epsilon: f64,
    pub views_effective: usize,
    pub has_label_view: bool,
    pub alpha_ignored: bool,
    pub block_sizes: Vec<usize>,
}

/// An assembled pencil together with the coupling grid and constraint
/// blocks it was built from (both needed by the objective evaluators).
pub struct ModelInstance {
    pub pencil: Pencil,
    pub phi: Arc<BlockGrid>,
    /// Constraint blocks as used in the pencil (regularized when eps > 0).
    pub psi: Vec<Arc<dyn SymmetricOperator>>,
    pub meta: ModelMeta,
}

/// Assemble the pencil for a model on a dataset.
pub fn instantiate(ds: &MultiViewDataset, spec: &ModelSpec) -> Result<ModelInstance> {
    spec.validate()?;
    let kind = spec.kind;
    let family = kind.family();

    // Label requirements per family.
    let needs_onehot = matches!(
        family,
        ModelFamily::Gma | ModelFamily::Mlda | ModelFamily::Mvmda
    );
    if needs_onehot && ds.label_kind() != LabelKind::MulticlassOnehot {
        return Err(Error::LabelsRequired {
            kind: kind.to_string(),
            needed: "multiclass one-hot".into(),
        });
    }
    let needs_any = matches!(
        family,
        ModelFamily::Hsic | ModelFamily::Mcca { label_view: true }
    );
    if needs_any && ds.labels().is_none() {
        return Err(Error::LabelsRequired {
            kind: kind.to_string(),
            needed: "multilabel or one-hot".into(),
        });
    }

    let label_view = match family {
        ModelFamily::Mcca { label_view } => label_view,
        ModelFamily::McccaBaseline => ds.labels().is_some(),
        _ => false,
    };

    // Single-view data is only meaningful for the discriminant reductions
    // and for the label-as-view correlation models.
    if ds.num_views() == 1 {
        let ok = matches!(family, ModelFamily::Gma | ModelFamily::Mlda) || label_view;
        if !ok {
            return Err(Error::SingleViewUnsupported {
                kind: kind.to_string(),
            });
        }
    }

    let n = ds.n();
    let mut eff_views: Vec<Arc<DMatrix<f64>>> = ds.views.clone();
    if label_view {
        eff_views.push(ds.require_labels(&kind.to_string(), "label view")?.clone());
    }
    let ve = eff_views.len();
    let layout = BlockLayout::new(eff_views.iter().map(|x| x.nrows()).collect());

    let labels = if needs_onehot {
        Some(Arc::new(LabelOperators::new(ds)?))
    } else {
        None
    };

    // Coupling grid.
    let mut grid: Vec<Vec<Option<Arc<dyn BlockOp>>>> =
        (0..ve).map(|_| (0..ve).map(|_| None).collect()).collect();
    for s in 0..ve {
        for t in 0..ve {
            let entry: Option<Arc<dyn BlockOp>> = match family {
                ModelFamily::Gma | ModelFamily::Mlda => {
                    if s == t {
                        Some(Arc::new(SymBlock(Arc::new(between_scatter_with(
                            eff_views[s].clone(),
                            labels.clone().expect("one-hot checked"),
                        )))))
                    } else {
                        Some(Arc::new(ScaledBlock::new(
                            Arc::new(cross_cov_of(eff_views[s].clone(), eff_views[t].clone(), n)),
                            spec.alpha,
                        )))
                    }
                }
                ModelFamily::Mvmda => Some(Arc::new(mvmda_with(
                    eff_views[s].clone(),
                    eff_views[t].clone(),
                    labels.clone().expect("one-hot checked"),
                ))),
                ModelFamily::Mcca { .. } | ModelFamily::McccaBaseline => {
                    if s == t {
                        None
                    } else {
                        Some(Arc::new(cross_cov_of(
                            eff_views[s].clone(),
                            eff_views[t].clone(),
                            n,
                        )))
                    }
                }
                ModelFamily::Hsic => {
                    if s == t {
                        Some(Arc::new(SymBlock(Arc::new(HsicOp {
                            x: eff_views[s].clone(),
                            y: ds
                                .require_labels(&kind.to_string(), "label kernel")?
                                .clone(),
                        }))))
                    } else {
                        Some(Arc::new(ScaledBlock::new(
                            Arc::new(cross_cov_of(eff_views[s].clone(), eff_views[t].clone(), n)),
                            spec.alpha,
                        )))
                    }
                }
            };
            grid[s][t] = entry;
        }
    }

    // Constraint blocks.
    let mut psi: Vec<Arc<dyn SymmetricOperator>> = Vec::with_capacity(ve);
    for x in eff_views.iter() {
        let base: Arc<dyn SymmetricOperator> = match family {
            ModelFamily::Gma | ModelFamily::Mvmda => Arc::new(within_scatter_with(
                x.clone(),
                labels.clone().expect("one-hot checked"),
            )),
            ModelFamily::Mlda
            | ModelFamily::Mcca { .. }
            | ModelFamily::McccaBaseline
            | ModelFamily::Hsic => Arc::new(cross_cov_of(x.clone(), x.clone(), n)),
        };
        psi.push(if spec.epsilon > 0.0 {
            Arc::new(RegularizedOp::new(base, spec.epsilon))
        } else {
            base
        });
    }

    let phi = Arc::new(BlockGrid::new(grid, layout.clone())?);
    let a: Arc<dyn SymmetricOperator> = Arc::new(block_full_op(phi.clone())?);
    let b: Arc<dyn SymmetricOperator> = Arc::new(block_diag_op(psi.clone())?);
    let pencil = Pencil::new_unchecked(a, b, layout.clone());

    Ok(ModelInstance {
        pencil,
        phi,
        psi,
        meta: ModelMeta {
            kind,
            alpha: spec.alpha,
            epsilon: spec.epsilon,
            views_effective: ve,
            has_label_view: label_view,
            alpha_ignored: kind.ignores_alpha(),
            block_sizes: layout.sizes().to_vec(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn seeded_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn onehot(classes: &[usize], c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(
            c,
            classes.len(),
            |r, i| if classes[i] == r { 1.0 } else { 0.0 },
        )
    }

    fn dense_of(op: &dyn SymmetricOperator) -> DMatrix<f64> {
        let d = op.dim();
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            m.set_column(j, &op.apply(&e));
        }
        m
    }

    fn dense_of_block(op: &dyn BlockOp) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(op.nrows(), op.ncols());
        for j in 0..op.ncols() {
            let mut e = DVector::zeros(op.ncols());
            e[j] = 1.0;
            m.set_column(j, &op.apply(&e));
        }
        m
    }

    fn dense_centering(m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) - 1.0 / m as f64
        })
    }

    fn random_dataset(
        rng: &mut ChaCha8Rng,
        dims: &[usize],
        n: usize,
        classes: Option<&[usize]>,
        c: usize,
    ) -> MultiViewDataset {
        let views = dims.iter().map(|&d| seeded_matrix(rng, d, n)).collect();
        match classes {
            Some(cl) => {
                MultiViewDataset::new(views, Some(onehot(cl, c)), LabelKind::MulticlassOnehot)
                    .unwrap()
            }
            None => MultiViewDataset::new(views, None, LabelKind::None).unwrap(),
        }
    }

    #[test]
    fn one_hot_violation_rejected() {
        let x = DMatrix::from_element(2, 3, 1.0);
        let mut y = onehot(&[0, 1, 0], 2);
        y[(1, 0)] = 1.0; // column 0 now sums to 2
        let res = MultiViewDataset::new(vec![x], Some(y), LabelKind::MulticlassOnehot);
        assert!(matches!(res, Err(Error::InvalidLabels(_))));
    }

    #[test]
    fn cross_cov_kills_constant_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = seeded_matrix(&mut rng, 4, 9);
        for j in 0..9 {
            x[(2, j)] = 7.5;
        }
        let ds = MultiViewDataset::new(vec![x], None, LabelKind::None).unwrap();
        let cov = cross_cov_block(&ds, 0, 0);
        for _ in 0..5 {
            let probe = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = SymmetricOperator::apply(&cov, &probe);
            assert!(y[2].abs() <= 1e-12 * probe.norm());
        }
    }

    #[test]
    fn cross_cov_two_sample_scalar() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let ds = MultiViewDataset::new(vec![x], None, LabelKind::None).unwrap();
        let cov = cross_cov_block(&ds, 0, 0);
        let y = SymmetricOperator::apply(&cov, &DVector::from_element(1, 1.0));
        assert!((y[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cross_cov_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = random_dataset(&mut rng, &[6, 5], 20, None, 0);
        let op = cross_cov_block(&ds, 0, 1);
        let dense = (&**ds.view(0) * dense_centering(20) * ds.view(1).transpose()) / 20.0;
        let got = dense_of_block(&op);
        assert!((got - &dense).amax() <= 1e-12 * dense.amax().max(1.0));
    }

    #[test]
    fn apply_q_single_class_is_mean_broadcast() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = random_dataset(&mut rng, &[2], 7, Some(&[0; 7]), 1);
        let lab = LabelOperators::new(&ds).unwrap();
        let x = DVector::from_fn(7, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = lab.apply_q(&x);
        let mean = x.sum() / 7.0;
        for i in 0..7 {
            assert!((q[i] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn apply_q_class_means_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = random_dataset(&mut rng, &[2], 3, Some(&[0, 0, 1]), 2);
        let lab = LabelOperators::new(&ds).unwrap();
        let q = lab.apply_q(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(q, DVector::from_vec(vec![1.5, 1.5, 3.0]));
    }

    #[test]
    fn apply_q_matches_dense_projector_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let classes: Vec<usize> = (0..15).map(|i| i % 3).collect();
        let ds = random_dataset(&mut rng, &[2], 15, Some(&classes), 3);
        let lab = LabelOperators::new(&ds).unwrap();
        let y = onehot(&classes, 3);
        let sigma_inv = DMatrix::from_diagonal(&DVector::from_fn(3, |r, _| 1.0 / lab.counts()[r]));
        let dense_q = y.transpose() * &sigma_inv * &y;
        let x = DVector::from_fn(15, |_, _| rng.sample::<f64, _>(StandardNormal));
        let got = lab.apply_q(&x);
        assert!((&got - &dense_q * &x).norm() <= 1e-12 * x.norm());
        let twice = lab.apply_q(&got);
        assert!((twice - &got).norm() <= 1e-12 * got.norm().max(1.0));
    }

    #[test]
    fn between_scatter_single_class_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = random_dataset(&mut rng, &[3], 8, Some(&[0; 8]), 1);
        let sb = between_scatter(&ds, 0).unwrap();
        let x = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        assert_eq!(sb.apply(&x), DVector::zeros(3));
    }

    #[test]
    fn between_scatter_hand_case_is_zero() {
        let x = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 1.0, -1.0]);
        let ds = MultiViewDataset::new(
            vec![x],
            Some(onehot(&[0, 0, 1, 1], 2)),
            LabelKind::MulticlassOnehot,
        )
        .unwrap();
        let sb = between_scatter(&ds, 0).unwrap();
        let y = sb.apply(&DVector::from_element(1, 1.0));
        assert!(y[0].abs() < 1e-14);
    }

    #[test]
    fn within_scatter_hand_case_is_four() {
        let x = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 1.0, -1.0]);
        let ds = MultiViewDataset::new(
            vec![x],
            Some(onehot(&[0, 0, 1, 1], 2)),
            LabelKind::MulticlassOnehot,
        )
        .unwrap();
        let sw = within_scatter(&ds, 0).unwrap();
        let y = sw.apply(&DVector::from_element(1, 1.0));
        assert!((y[0] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn within_scatter_every_sample_own_class_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let classes: Vec<usize> = (0..5).collect();
        let ds = random_dataset(&mut rng, &[3], 5, Some(&classes), 5);
        let sw = within_scatter(&ds, 0).unwrap();
        let x = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        assert!(sw.apply(&x).norm() <= 1e-13 * x.norm());
    }

    #[test]
    fn between_scatter_matches_definitional_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let classes: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let ds = random_dataset(&mut rng, &[4], 12, Some(&classes), 3);
        let sb = between_scatter(&ds, 0).unwrap();
        // Definitional oracle: sum_r n_r (m_r - m)(m_r - m)'.
        let x = ds.view(0);
        let m_all = x.column_mean();
        let mut want = DMatrix::zeros(4, 4);
        for r in 0..3 {
            let members: Vec<usize> = classes
                .iter()
                .enumerate()
                .filter(|(_, &cr)| cr == r)
                .map(|(i, _)| i)
                .collect();
            let sel = x.select_columns(&members);
            let mr = sel.column_mean();
            let diff = &mr - &m_all;
            want += members.len() as f64 * &diff * diff.transpose();
        }
        let got = dense_of(&sb);
        assert!((got - &want).amax() <= 1e-10 * want.amax().max(1.0));
    }

    #[test]
    fn scatter_identity_on_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let classes: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let ds = random_dataset(&mut rng, &[6], 20, Some(&classes), 4);
        let sb = between_scatter(&ds, 0).unwrap();
        let sw = within_scatter(&ds, 0).unwrap();
        let cov = cross_cov_block(&ds, 0, 0);
        for _ in 0..5 {
            let x = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lhs = sw.apply(&x) + sb.apply(&x);
            let rhs = SymmetricOperator::apply(&cov, &x) * 20.0;
            assert!((lhs - &rhs).norm() <= 1e-9 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn mvmda_single_class_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ds = random_dataset(&mut rng, &[3, 2], 6, Some(&[0; 6]), 1);
        let block = mvmda_coupling(&ds, 0, 1).unwrap();
        let x = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        assert!(block.apply(&x).norm() <= 1e-14 * x.norm());
    }

    fn dense_mvmda(ds: &MultiViewDataset, s: usize, t: usize) -> DMatrix<f64> {
        let lab = LabelOperators::new(ds).unwrap();
        let c = lab.num_classes();
        let classes = ds.class_indices().unwrap();
        let y = onehot(&classes, c);
        let sigma_inv = DMatrix::from_diagonal(&DVector::from_fn(c, |r, _| 1.0 / lab.counts()[r]));
        let a = y.transpose() * &sigma_inv * dense_centering(c) * &sigma_inv * &y;
        &**ds.view(s) * a * ds.view(t).transpose()
    }

    #[test]
    fn mvmda_two_class_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ds = random_dataset(&mut rng, &[1, 1], 8, Some(&[0, 0, 0, 0, 1, 1, 1, 1]), 2);
        let block = mvmda_coupling(&ds, 0, 1).unwrap();
        let want = dense_mvmda(&ds, 0, 1);
        let got = dense_of_block(&block);
        assert!((got - &want).amax() <= 1e-12 * want.amax().max(1.0));
    }

    #[test]
    fn mvmda_three_class_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let classes: Vec<usize> = (0..14).map(|i| i % 3).collect();
        let ds = random_dataset(&mut rng, &[5, 4], 14, Some(&classes), 3);
        let block = mvmda_coupling(&ds, 0, 1).unwrap();
        let want = dense_mvmda(&ds, 0, 1);
        let got = dense_of_block(&block);
        assert!((got - &want).amax() <= 1e-11 * want.amax().max(1.0));
    }

    #[test]
    fn mvmda_invariant_to_sample_reordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let classes: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let ds = random_dataset(&mut rng, &[4, 3], 10, Some(&classes), 3);
        let perm: Vec<usize> = vec![7, 2, 9, 0, 4, 1, 8, 3, 6, 5];
        let permuted = ds.subset(&perm).unwrap();
        let b1 = mvmda_coupling(&ds, 0, 1).unwrap();
        let b2 = mvmda_coupling(&permuted, 0, 1).unwrap();
        let x = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y1 = b1.apply(&x);
        let y2 = b2.apply(&x);
        assert!((y1 - &y2).norm() <= 1e-10 * y2.norm().max(1.0));
    }

    #[test]
    fn hsic_zero_labels_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = seeded_matrix(&mut rng, 3, 6);
        let y = DMatrix::zeros(2, 6);
        let ds = MultiViewDataset::new(vec![x], Some(y), LabelKind::Multilabel).unwrap();
        let op = hsic_block(&ds, 0).unwrap();
        let probe = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        assert_eq!(op.apply(&probe), DVector::zeros(3));
    }

    #[test]
    fn hsic_constant_label_row_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = seeded_matrix(&mut rng, 3, 6);
        let y = DMatrix::from_element(1, 6, 1.0);
        let ds = MultiViewDataset::new(vec![x], Some(y), LabelKind::Multilabel).unwrap();
        let op = hsic_block(&ds, 0).unwrap();
        let probe = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        assert!(op.apply(&probe).norm() <= 1e-13 * probe.norm());
    }

    #[test]
    fn hsic_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = seeded_matrix(&mut rng, 5, 12);
        let y = DMatrix::from_fn(
            3,
            12,
            |_, _| if rng.random::<f64>() > 0.5 { 1.0 } else { 0.0 },
        );
        let ds =
            MultiViewDataset::new(vec![x.clone()], Some(y.clone()), LabelKind::Multilabel).unwrap();
        let op = hsic_block(&ds, 0).unwrap();
        let h = dense_centering(12);
        let want = &x * &h * y.transpose() * &y * &h * x.transpose();
        let got = dense_of(&op);
        assert!((got - &want).amax() <= 1e-11 * want.amax().max(1.0));
    }

    #[test]
    fn omcca_two_views_reproduces_occa_pencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ds = random_dataset(&mut rng, &[4, 3], 15, None, 0);
        let spec = ModelSpec::new(ModelKind::Omcca, 1.0, 1e-8, 2).unwrap();
        let inst = instantiate(&ds, &spec).unwrap();
        let h = dense_centering(15);
        let c12 = (&**ds.view(0) * &h * ds.view(1).transpose()) / 15.0;
        let c11 = (&**ds.view(0) * &h * ds.view(0).transpose()) / 15.0;
        let c22 = (&**ds.view(1) * &h * ds.view(1).transpose()) / 15.0;
        let mut a_dense = DMatrix::zeros(7, 7);
        a_dense.view_mut((0, 4), (4, 3)).copy_from(&c12);
        a_dense.view_mut((4, 0), (3, 4)).copy_from(&c12.transpose());
        let mut b_dense = DMatrix::zeros(7, 7);
        b_dense
            .view_mut((0, 0), (4, 4))
            .copy_from(&(c11 + DMatrix::identity(4, 4) * 1e-8));
        b_dense
            .view_mut((4, 4), (3, 3))
            .copy_from(&(c22 + DMatrix::identity(3, 3) * 1e-8));
        let got_a = dense_of(inst.pencil.a.as_ref());
        let got_b = dense_of(inst.pencil.b.as_ref());
        assert!((got_a - &a_dense).amax() <= 1e-12 * a_dense.amax().max(1.0));
        assert!((got_b - &b_dense).amax() <= 1e-12 * b_dense.amax().max(1.0));
    }

    #[test]
    fn ogma_single_view_is_the_lda_pencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let classes: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let ds = random_dataset(&mut rng, &[4], 10, Some(&classes), 2);
        let spec = ModelSpec::new(ModelKind::Ogma, 1.0, 1e-8, 1).unwrap();
        let inst = instantiate(&ds, &spec).unwrap();
        let sb = dense_of(&between_scatter(&ds, 0).unwrap());
        let sw = dense_of(&within_scatter(&ds, 0).unwrap()) + DMatrix::identity(4, 4) * 1e-8;
        let got_a = dense_of(inst.pencil.a.as_ref());
        let got_b = dense_of(inst.pencil.b.as_ref());
        assert!((got_a - &sb).amax() <= 1e-12 * sb.amax().max(1.0));
        assert!((got_b - &sw).amax() <= 1e-12 * sw.amax().max(1.0));
    }

    #[test]
    fn ohsic_matches_fully_dense_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let n = 12;
        let x1 = seeded_matrix(&mut rng, 4, n);
        let x2 = seeded_matrix(&mut rng, 3, n);
        let y = DMatrix::from_fn(
            3,
            n,
            |_, _| if rng.random::<f64>() > 0.6 { 1.0 } else { 0.0 },
        );
        let ds = MultiViewDataset::new(
            vec![x1.clone(), x2.clone()],
            Some(y.clone()),
            LabelKind::Multilabel,
        )
        .unwrap();
        let alpha = 0.3;
        let eps = 1e-6;
        let spec = ModelSpec::new(ModelKind::Ohsic, alpha, eps, 2).unwrap();
        let inst = instantiate(&ds, &spec).unwrap();
        let h = dense_centering(n);
        let nf = n as f64;
        let hs1 = &x1 * &h * y.transpose() * &y * &h * x1.transpose();
        let hs2 = &x2 * &h * y.transpose() * &y * &h * x2.transpose();
        let c12 = (&x1 * &h * x2.transpose()) / nf;
        let mut a_dense = DMatrix::zeros(7, 7);
        a_dense.view_mut((0, 0), (4, 4)).copy_from(&hs1);
        a_dense.view_mut((4, 4), (3, 3)).copy_from(&hs2);
        a_dense.view_mut((0, 4), (4, 3)).copy_from(&(&c12 * alpha));
        a_dense
            .view_mut((4, 0), (3, 4))
            .copy_from(&(c12.transpose() * alpha));
        let got_a = dense_of(inst.pencil.a.as_ref());
        assert!((got_a - &a_dense).amax() <= 1e-10 * a_dense.amax().max(1.0));
        let c11 = (&x1 * &h * x1.transpose()) / nf + DMatrix::identity(4, 4) * eps;
        let c22 = (&x2 * &h * x2.transpose()) / nf + DMatrix::identity(3, 3) * eps;
        let mut b_dense = DMatrix::zeros(7, 7);
        b_dense.view_mut((0, 0), (4, 4)).copy_from(&c11);
        b_dense.view_mut((4, 4), (3, 3)).copy_from(&c22);
        let got_b = dense_of(inst.pencil.b.as_ref());
        assert!((got_b - &b_dense).amax() <= 1e-10 * b_dense.amax().max(1.0));
    }

    #[test]
    fn om2cca_appends_label_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let classes: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let ds = random_dataset(&mut rng, &[4, 3], 9, Some(&classes), 3);
        let spec = ModelSpec::new(ModelKind::Om2cca, 1.0, 1e-8, 2).unwrap();
        let inst = instantiate(&ds, &spec).unwrap();
        assert_eq!(inst.meta.views_effective, 3);
        assert!(inst.meta.has_label_view);
        assert_eq!(inst.meta.block_sizes, vec![4, 3, 3]);
    }

    #[test]
    fn supervised_kind_without_labels_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ds = random_dataset(&mut rng, &[4, 3], 9, None, 0);
        let spec = ModelSpec::new(ModelKind::Ogma, 1.0, 1e-8, 2).unwrap();
        assert!(matches!(
            instantiate(&ds, &spec),
            Err(Error::LabelsRequired { .. })
        ));
    }

    #[test]
    fn single_view_rejected_for_non_reducing_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let classes: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let ds = random_dataset(&mut rng, &[4], 8, Some(&classes), 2);
        let spec = ModelSpec::new(ModelKind::Omvmda, 1.0, 1e-8, 1).unwrap();
        assert!(matches!(
            instantiate(&ds, &spec),
            Err(Error::SingleViewUnsupported { .. })
        ));
        let ok = ModelSpec::new(ModelKind::Omlda, 1.0, 1e-8, 1).unwrap();
        assert!(instantiate(&ds, &ok).is_ok());
    }
}
