//! Text-based numeric interchange: delimiter-separated matrices, dataset
//! manifests, and projection bundles.
//!
//! All numeric output uses 17-significant-digit scientific notation, so a
//! save/load round trip reproduces every `f64` bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LabelKind, ModelKind, MultiViewDataset};
use crate::osave::ProjectionSet;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write a matrix as delimiter-separated rows with full round-trip
/// precision.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>, delimiter: char) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 24);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(delimiter);
            }
            out.push_str(&format!("{:.16e}", m[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Read a delimiter-separated numeric table, one row per line, no header.
pub fn read_matrix(path: &Path, delimiter: char) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (row_idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(width.max(4));
        for (col_idx, field) in line.split(delimiter).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                row: row_idx + 1,
                col: col_idx + 1,
                detail: format!("non-numeric cell {:?}", field.trim()),
            })?;
            row.push(v);
        }
        if rows.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(Error::Parse {
                file,
                row: row_idx + 1,
                col: row.len(),
                detail: format!("expected {width} fields, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            file,
            row: 1,
            col: 1,
            detail: "empty table".into(),
        });
    }
    let nrows = rows.len();
    Ok(DMatrix::from_fn(nrows, width, |i, j| rows[i][j]))
}

/// One view entry of a dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestView {
    pub id: String,
    pub path: String,
    /// Expected feature count, validated against the file.
    pub features: usize,
}

/// Optional label entry of a dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLabels {
    pub path: String,
    pub kind: LabelKind,
}

fn default_delimiter() -> char {
    ','
}

/// Dataset manifest: view files with expected sizes, optional labels, and
/// the field delimiter shared by all referenced files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub views: Vec<ManifestView>,
    #[serde(default)]
    pub labels: Option<ManifestLabels>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Manifest("manifest lists no views".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &self.views {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate view id {:?}", v.id)));
            }
        }
        if let Some(lab) = &self.labels {
            if lab.kind == LabelKind::None {
                return Err(Error::Manifest(
                    "label entry present but kind is none".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Load the dataset a manifest describes. View files hold one sample per
/// row; views are transposed to features-by-samples internally.
pub fn load_dataset(manifest_path: &Path) -> Result<(Manifest, MultiViewDataset)> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut views = Vec::with_capacity(manifest.views.len());
    let mut n_expected: Option<(usize, String)> = None;
    for entry in &manifest.views {
        let table = read_matrix(&resolve(base, &entry.path), manifest.delimiter)?;
        if table.ncols() != entry.features {
            return Err(Error::Manifest(format!(
                "view {:?}: file has {} features per sample, manifest says {}",
                entry.id,
                table.ncols(),
                entry.features
            )));
        }
        match &n_expected {
            None => n_expected = Some((table.nrows(), entry.id.clone())),
            Some((n, reference)) => {
                if table.nrows() != *n {
                    return Err(Error::RowCountMismatch {
                        view: entry.id.clone(),
                        got: table.nrows(),
                        expected: *n,
                        reference: reference.clone(),
                    });
                }
            }
        }
        views.push(table.transpose());
    }
    let (labels, kind) = match &manifest.labels {
        None => (None, LabelKind::None),
        Some(lab) => {
            let table = read_matrix(&resolve(base, &lab.path), manifest.delimiter)?;
            let (n, reference) = n_expected.as_ref().expect("at least one view");
            if table.nrows() != *n {
                return Err(Error::RowCountMismatch {
                    view: "labels".into(),
                    got: table.nrows(),
                    expected: *n,
                    reference: reference.clone(),
                });
            }
            (Some(table.transpose()), lab.kind)
        }
    };
    let ds = MultiViewDataset::new(views, labels, kind)?;
    Ok((manifest, ds))
}

/// Per-view shape record in the bundle sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleView {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
}

/// Sidecar metadata of a fitted projection bundle. Field order is the
/// stable key order of the serialized file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleMeta {
    pub dataset: String,
    pub model: ModelKind,
    pub alpha: f64,
    pub epsilon: f64,
    pub k: usize,
    pub seed: u64,
    pub krylov_order: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub guard_tol: f64,
    pub orthogonal: bool,
    pub has_label_view: bool,
    pub views: Vec<BundleView>,
    pub eigenvalues: Vec<f64>,
    pub converged: Vec<bool>,
    pub residuals: Vec<f64>,
    pub objective_g: f64,
    pub wall_clock_seconds: f64,
}

/// A saved or loaded fit: per-view projection matrices plus the sidecar.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub meta: BundleMeta,
    pub projections: Vec<DMatrix<f64>>,
}

impl Bundle {
    /// Projection matrices for the input views only (label view dropped).
    pub fn input_projections(&self) -> Result<ProjectionSet> {
        let take = if self.meta.has_label_view {
            self.projections.len() - 1
        } else {
            self.projections.len()
        };
        ProjectionSet::new(self.projections[..take].to_vec(), self.meta.k)
    }
}

/// Write one projection file per view plus the `meta.json` sidecar.
pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (view, proj) in bundle.meta.views.iter().zip(&bundle.projections) {
        write_matrix(&dir.join(format!("projection_{}.csv", view.id)), proj, ',')?;
    }
    let meta_path = dir.join("meta.json");
    let text =
        serde_json::to_string_pretty(&bundle.meta).map_err(|e| Error::Manifest(e.to_string()))?;
    fs::write(&meta_path, text + "\n").map_err(|e| io_err(&meta_path, e))
}

/// Load a bundle saved by [`save_bundle`]; matrices round-trip exactly.
pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: BundleMeta =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    let mut projections = Vec::with_capacity(meta.views.len());
    for view in &meta.views {
        let p = read_matrix(&dir.join(format!("projection_{}.csv", view.id)), ',')?;
        if p.shape() != (view.rows, view.cols) {
            return Err(Error::Manifest(format!(
                "projection for view {:?} has shape {:?}, sidecar says ({}, {})",
                view.id,
                p.shape(),
                view.rows,
                view.cols
            )));
        }
        projections.push(p);
    }
    Ok(Bundle { meta, projections })
}

/// Resolve a path relative to a base directory unless it is absolute.
pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
