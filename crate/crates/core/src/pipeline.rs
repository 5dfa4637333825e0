//! Shared fit/transform drivers used by the CLI, the evaluation harness,
//! and the C bindings.

use nalgebra::DMatrix;

use crate::eigsolve::{gev_topk, SolverConfig};
use crate::error::Result;
use crate::models::{instantiate, ModelMeta, ModelSpec, MultiViewDataset};
use crate::osave::{osave, trace_ratio_objective, DegeneracyPolicy, ProjectionSet};

/// Learned projections plus the per-column solver diagnostics.
pub struct FitResult {
    /// One matrix per effective view (a label view, when the model adds
    /// one, sits last).
    pub projections: ProjectionSet,
    pub eigenvalues: Vec<f64>,
    pub converged: Vec<bool>,
    pub residuals: Vec<f64>,
    /// Worst-view feasibility residual per column (orthogonal models only).
    pub feasibility: Vec<f64>,
    pub objective_g: f64,
    pub meta: ModelMeta,
}

impl FitResult {
    /// Projections of the input views only, label view dropped.
    pub fn input_projections(&self) -> Result<ProjectionSet> {
        let take = if self.meta.has_label_view {
            self.projections.view_count() - 1
        } else {
            self.projections.view_count()
        };
        ProjectionSet::new(
            self.projections.matrices()[..take].to_vec(),
            self.projections.k(),
        )
    }
}

/// Instantiate the model on the dataset and solve it: the successive
/// orthogonal driver for the orthogonal kinds, the summed-constraint
/// generalized eigensolver for the ratio-trace baselines.
pub fn fit_model(
    ds: &MultiViewDataset,
    spec: &ModelSpec,
    config: &SolverConfig,
    policy: DegeneracyPolicy,
) -> Result<FitResult> {
    let inst = instantiate(ds, spec)?;
    if spec.kind.is_orthogonal() {
        let out = osave(&inst.pencil, spec.k, config, policy)?;
        let objective_g = trace_ratio_objective(&out.projections, &inst.phi, &inst.psi)?;
        Ok(FitResult {
            eigenvalues: out.eigenvalues,
            converged: out.columns.iter().map(|c| c.converged).collect(),
            residuals: out.columns.iter().map(|c| c.residual).collect(),
            feasibility: out.columns.iter().map(|c| c.feasibility).collect(),
            projections: out.projections,
            objective_g,
            meta: inst.meta,
        })
    } else {
        let top = gev_topk(&inst.pencil, spec.k, config)?;
        let layout = &inst.pencil.block_sizes;
        let matrices: Vec<DMatrix<f64>> = (0..layout.num_blocks())
            .map(|s| {
                top.vectors
                    .rows(layout.offset(s), layout.size(s))
                    .into_owned()
            })
            .collect();
        let projections = ProjectionSet::new(matrices, spec.k)?;
        let objective_g = trace_ratio_objective(&projections, &inst.phi, &inst.psi)?;
        Ok(FitResult {
            eigenvalues: top.values,
            converged: top.results.iter().map(|r| r.converged).collect(),
            residuals: top.results.iter().map(|r| r.residual).collect(),
            feasibility: Vec::new(),
            projections,
            objective_g,
            meta: inst.meta,
        })
    }
}
