//! Batch command-line front end: fit, transform, eval, solve-eig, bench,
//! and verify.
//!
//! Every command is deterministic under a fixed seed. Exit status 0 means
//! success, 2 an input problem (files, flags, shapes), 3 a numerical
//! failure.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::eigsolve::{loecg, Pencil, SolverConfig};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, knn1, mlknn_fit, mlknn_predict, multilabel_metrics, project_fuse, Split,
};
use crate::io::{
    load_bundle, load_dataset, read_matrix, save_bundle, write_matrix, Bundle, BundleMeta,
    BundleView, Manifest,
};
use crate::linop::{BlockLayout, DenseSymOp};
use crate::models::{LabelKind, ModelKind, ModelSpec, MultiViewDataset};
use crate::osave::DegeneracyPolicy;
use crate::pipeline::{fit_model, FitResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser)]
#[command(
    name = "omvsl",
    version,
    about = "Orthogonal multi-view subspace learning: fit per-view projections, transform data, and evaluate embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a dataset and write the projection bundle.
    Fit(FitArgs),
    /// Project a dataset through a fitted bundle into fused features.
    Transform(TransformArgs),
    /// Split/fit/classify evaluation with per-split and aggregate metrics.
    Eval(EvalArgs),
    /// Solve one generalized eigenvalue problem given dense matrix files.
    SolveEig(SolveEigArgs),
    /// Matvec-count and apply-time scaling study.
    Bench(BenchArgs),
    /// Recheck the orthonormality of a saved bundle.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct SolverOpts {
    /// Krylov subspace order per outer iteration.
    #[arg(long, default_value_t = 10)]
    krylov_order: usize,
    /// Convergence tolerance on the normalized residual.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Threshold for dropping the conjugate direction.
    #[arg(long, default_value_t = 1e-12)]
    guard_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverOpts {
    fn to_config(&self) -> SolverConfig {
        SolverConfig {
            krylov_order: self.krylov_order,
            tol: self.tol,
            max_iters: self.max_iters,
            guard_tol: self.guard_tol,
            seed: self.seed,
        }
    }
}

#[derive(Args, Clone)]
struct ModelOpts {
    /// Model kind: ogma, omlda, omvmda, om2cca, omcca, ohsic, gev-gma,
    /// gev-mlda, gev-mvmda, gev-mcca, hsic-gev.
    #[arg(long)]
    model: String,
    /// Projection columns per view.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Cross-covariance weight (ignored by the mvmda and mcca families).
    #[arg(long)]
    alpha: Option<f64>,
    /// Constraint-block ridge; 0 disables regularization.
    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,
}

impl ModelOpts {
    fn to_spec(&self) -> Result<ModelSpec> {
        let kind: ModelKind = self.model.parse()?;
        let spec = ModelSpec::new(kind, self.alpha.unwrap_or(1.0), self.epsilon, self.k)?;
        if self.alpha.is_some() && kind.ignores_alpha() {
            eprintln!("warning: model {kind} ignores --alpha");
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    solver: SolverOpts,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Fill degenerate view columns deterministically instead of failing.
    #[arg(long)]
    degenerate_fill: bool,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output file for the fused feature matrix.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated sample indices (default: all samples).
    #[arg(long)]
    indices: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    model: ModelOpts,
    #[command(flatten)]
    solver: SolverOpts,
    /// Number of random splits.
    #[arg(long, default_value_t = 10)]
    splits: usize,
    /// Training fraction of each split.
    #[arg(long, default_value_t = 0.1)]
    split_ratio: f64,
    /// Neighbor count of the multi-label backend classifier.
    #[arg(long, default_value_t = 10)]
    knn: usize,
    /// Laplace smoothing of the multi-label backend classifier.
    #[arg(long, default_value_t = 1.0)]
    smoothing: f64,
    /// Output directory for report.json and table.csv.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated k grid (overrides --k).
    #[arg(long)]
    grid_k: Option<String>,
    /// Comma-separated alpha grid (overrides --alpha).
    #[arg(long)]
    grid_alpha: Option<String>,
    #[arg(long)]
    degenerate_fill: bool,
}

#[derive(Args)]
struct SolveEigArgs {
    /// Dense symmetric matrix file for A.
    #[arg(long)]
    a_matrix: PathBuf,
    /// Dense symmetric positive semi-definite matrix file for B.
    #[arg(long)]
    b_matrix: PathBuf,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[command(flatten)]
    solver: SolverOpts,
    /// Optional output file for the eigenvector.
    #[arg(long)]
    out_vector: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated dense dimensions for the apply-time study.
    #[arg(long, default_value = "128,256,512")]
    dims: String,
    /// Comma-separated k values for the matvec-count study.
    #[arg(long, default_value = "2,4,8")]
    ks: String,
    #[command(flatten)]
    solver: SolverOpts,
    /// Optional output file for the flat timing table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Orthonormality tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

/// Parse argv and run; returns the process exit status.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Entry point kept separate from process argv for in-process testing.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Transform(args) => cmd_transform(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::SolveEig(args) => cmd_solve_eig(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Verify(args) => cmd_verify(&args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

fn bundle_views(manifest: &Manifest, fit: &FitResult) -> Vec<BundleView> {
    let mut views: Vec<BundleView> = manifest
        .views
        .iter()
        .enumerate()
        .map(|(s, v)| BundleView {
            id: v.id.clone(),
            rows: fit.projections.matrix(s).nrows(),
            cols: fit.projections.matrix(s).ncols(),
        })
        .collect();
    if fit.meta.has_label_view {
        let s = views.len();
        views.push(BundleView {
            id: "labels".into(),
            rows: fit.projections.matrix(s).nrows(),
            cols: fit.projections.matrix(s).ncols(),
        });
    }
    views
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let start = Instant::now();
    let (manifest, ds) = load_dataset(&args.manifest)?;
    let spec = args.model.to_spec()?;
    let config = args.solver.to_config();
    let policy = if args.degenerate_fill {
        DegeneracyPolicy::FillDeterministic
    } else {
        DegeneracyPolicy::Error
    };
    let fit = fit_model(&ds, &spec, &config, policy)?;
    let meta = BundleMeta {
        dataset: manifest.name.clone(),
        model: spec.kind,
        alpha: spec.alpha,
        epsilon: spec.epsilon,
        k: spec.k,
        seed: config.seed,
        krylov_order: config.krylov_order,
        tol: config.tol,
        max_iters: config.max_iters,
        guard_tol: config.guard_tol,
        orthogonal: spec.kind.is_orthogonal(),
        has_label_view: fit.meta.has_label_view,
        views: bundle_views(&manifest, &fit),
        eigenvalues: fit.eigenvalues.clone(),
        converged: fit.converged.clone(),
        residuals: fit.residuals.clone(),
        objective_g: fit.objective_g,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    if meta.converged.iter().any(|&c| !c) {
        eprintln!("warning: some columns did not converge; flags recorded in meta.json");
    }
    let bundle = Bundle {
        meta,
        projections: fit.projections.matrices().to_vec(),
    };
    save_bundle(&args.out, &bundle)?;
    println!(
        "fit {} k={} views={} objective_g={:.6e} -> {}",
        spec.kind,
        spec.k,
        ds.num_views(),
        fit.objective_g,
        args.out.display()
    );
    Ok(())
}

fn parse_indices(spec: &str, n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for field in spec.split(',') {
        let idx: usize = field
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad sample index {:?}", field.trim())))?;
        if idx >= n {
            return Err(Error::InvalidConfig(format!(
                "sample index {idx} out of range for {n} samples"
            )));
        }
        out.push(idx);
    }
    Ok(out)
}

fn cmd_transform(args: &TransformArgs) -> Result<()> {
    let (manifest, ds) = load_dataset(&args.manifest)?;
    let bundle = load_bundle(&args.bundle)?;
    let input_views: Vec<&BundleView> = bundle
        .meta
        .views
        .iter()
        .take(if bundle.meta.has_label_view {
            bundle.meta.views.len() - 1
        } else {
            bundle.meta.views.len()
        })
        .collect();
    if input_views.len() != manifest.views.len()
        || input_views
            .iter()
            .zip(&manifest.views)
            .any(|(b, m)| b.id != m.id)
    {
        return Err(Error::Manifest(
            "bundle views do not match the manifest views".into(),
        ));
    }
    let projections = bundle.input_projections()?;
    let idx: Vec<usize> = match &args.indices {
        Some(spec) => parse_indices(spec, ds.n())?,
        None => (0..ds.n()).collect(),
    };
    let fused = project_fuse(&projections, &ds, &idx)?;
    write_matrix(&args.out, &fused, manifest.delimiter)?;
    println!(
        "transform {} samples -> {} rows x {} cols -> {}",
        idx.len(),
        fused.nrows(),
        fused.ncols(),
        args.out.display()
    );
    Ok(())
}

fn parse_grid<T: std::str::FromStr>(spec: &str, what: &str) -> Result<Vec<T>> {
    spec.split(',')
        .map(|f| {
            f.trim()
                .parse::<T>()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} value {:?}", f.trim())))
        })
        .collect()
}

#[derive(Serialize)]
struct SplitRecord {
    split: usize,
    metrics: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct GridRecord {
    k: usize,
    alpha: f64,
    per_split: Vec<SplitRecord>,
    mean: BTreeMap<String, f64>,
    std: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct EvalReport {
    dataset: String,
    model: ModelKind,
    task: String,
    epsilon: f64,
    splits: usize,
    split_ratio: f64,
    seed: u64,
    /// Whether larger is better, per metric.
    metric_directions: BTreeMap<String, bool>,
    grid: Vec<GridRecord>,
}

fn eval_one_split(
    ds: &MultiViewDataset,
    spec: &ModelSpec,
    config: &SolverConfig,
    policy: DegeneracyPolicy,
    split: &Split,
    knn_k: usize,
    smoothing: f64,
) -> Result<BTreeMap<String, f64>> {
    let train_ds = ds.subset(&split.train_idx)?;
    let fit = fit_model(&train_ds, spec, config, policy)?;
    let projections = fit.input_projections()?;
    let fused_train = project_fuse(&projections, ds, &split.train_idx)?;
    let fused_test = project_fuse(&projections, ds, &split.test_idx)?;
    let mut metrics = BTreeMap::new();
    match ds.label_kind() {
        LabelKind::MulticlassOnehot => {
            let classes = ds.class_indices()?;
            let train_labels: Vec<usize> = split.train_idx.iter().map(|&i| classes[i]).collect();
            let test_labels: Vec<usize> = split.test_idx.iter().map(|&i| classes[i]).collect();
            let pred = knn1(&fused_train, &train_labels, &fused_test)?;
            metrics.insert("accuracy".into(), accuracy(&pred, &test_labels));
        }
        LabelKind::Multilabel => {
            let y = ds.labels().expect("labels checked").as_ref();
            let train_y = y.select_columns(&split.train_idx);
            let test_y = y.select_columns(&split.test_idx);
            let k_nn = knn_k.min(split.train_idx.len().saturating_sub(1)).max(1);
            let model = mlknn_fit(&fused_train, &train_y, k_nn, smoothing)?;
            let out = mlknn_predict(&model, &fused_test)?;
            let report = multilabel_metrics(&out.scores, &out.predictions, &test_y)?;
            for ((name, _), value) in crate::eval::METRIC_NAMES.iter().zip(report.values()) {
                metrics.insert((*name).into(), value);
            }
        }
        LabelKind::None => {
            return Err(Error::LabelsRequired {
                kind: "eval".into(),
                needed: "any".into(),
            })
        }
    }
    Ok(metrics)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (manifest, ds) = load_dataset(&args.manifest)?;
    if ds.labels().is_none() {
        return Err(Error::LabelsRequired {
            kind: "eval".into(),
            needed: "any".into(),
        });
    }
    if args.splits == 0 {
        return Err(Error::InvalidConfig("need at least one split".into()));
    }
    let base_spec = args.model.to_spec()?;
    let config = args.solver.to_config();
    let policy = if args.degenerate_fill {
        DegeneracyPolicy::FillDeterministic
    } else {
        DegeneracyPolicy::Error
    };
    let k_grid: Vec<usize> = match &args.grid_k {
        Some(spec) => parse_grid(spec, "k")?,
        None => vec![base_spec.k],
    };
    let alpha_grid: Vec<f64> = match &args.grid_alpha {
        Some(spec) => parse_grid(spec, "alpha")?,
        None => vec![base_spec.alpha],
    };

    let task = match ds.label_kind() {
        LabelKind::MulticlassOnehot => "multiclass",
        LabelKind::Multilabel => "multilabel",
        LabelKind::None => unreachable!("labels checked above"),
    };

    let mut grid_records = Vec::new();
    for &k in &k_grid {
        for &alpha in &alpha_grid {
            let spec = ModelSpec::new(base_spec.kind, alpha, base_spec.epsilon, k)?;
            let mut per_split = Vec::with_capacity(args.splits);
            for s in 0..args.splits {
                let split =
                    Split::new(ds.n(), args.split_ratio, config.seed.wrapping_add(s as u64))?;
                let metrics = eval_one_split(
                    &ds,
                    &spec,
                    &config,
                    policy,
                    &split,
                    args.knn,
                    args.smoothing,
                )?;
                per_split.push(SplitRecord { split: s, metrics });
            }
            let names: Vec<String> = per_split[0].metrics.keys().cloned().collect();
            let mut mean = BTreeMap::new();
            let mut std = BTreeMap::new();
            for name in &names {
                let vals: Vec<f64> = per_split.iter().map(|r| r.metrics[name]).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
                mean.insert(name.clone(), m);
                std.insert(name.clone(), var.sqrt());
            }
            grid_records.push(GridRecord {
                k,
                alpha,
                per_split,
                mean,
                std,
            });
        }
    }

    let mut metric_directions = BTreeMap::new();
    match ds.label_kind() {
        LabelKind::MulticlassOnehot => {
            metric_directions.insert("accuracy".into(), true);
        }
        LabelKind::Multilabel => {
            for (name, higher_is_better) in crate::eval::METRIC_NAMES {
                metric_directions.insert(name.into(), higher_is_better);
            }
        }
        LabelKind::None => {}
    }
    let report = EvalReport {
        dataset: manifest.name.clone(),
        model: base_spec.kind,
        task: task.into(),
        epsilon: base_spec.epsilon,
        splits: args.splits,
        split_ratio: args.split_ratio,
        seed: config.seed,
        metric_directions,
        grid: grid_records,
    };

    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    let report_path = args.out.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Manifest(e.to_string()))?;
    std::fs::write(&report_path, json + "\n").map_err(|e| Error::Io {
        path: report_path.display().to_string(),
        source: e,
    })?;

    // Flat table: one row per (grid point, split) plus mean and std rows.
    let names: Vec<String> = report.grid[0].mean.keys().cloned().collect();
    let mut table = String::new();
    table.push_str("model,k,alpha,split");
    for name in &names {
        table.push(',');
        table.push_str(name);
    }
    table.push('\n');
    for rec in &report.grid {
        for split_rec in &rec.per_split {
            table.push_str(&format!(
                "{},{},{:.16e},{}",
                report.model, rec.k, rec.alpha, split_rec.split
            ));
            for name in &names {
                table.push_str(&format!(",{:.16e}", split_rec.metrics[name]));
            }
            table.push('\n');
        }
        for (tag, stats) in [("mean", &rec.mean), ("std", &rec.std)] {
            table.push_str(&format!(
                "{},{},{:.16e},{}",
                report.model, rec.k, rec.alpha, tag
            ));
            for name in &names {
                table.push_str(&format!(",{:.16e}", stats[name]));
            }
            table.push('\n');
        }
    }
    let table_path = args.out.join("table.csv");
    std::fs::write(&table_path, table).map_err(|e| Error::Io {
        path: table_path.display().to_string(),
        source: e,
    })?;

    for rec in &report.grid {
        let summary: Vec<String> = names
            .iter()
            .map(|n| format!("{n}={:.4}±{:.4}", rec.mean[n], rec.std[n]))
            .collect();
        println!(
            "eval {} k={} alpha={} splits={}: {}",
            report.model,
            rec.k,
            rec.alpha,
            args.splits,
            summary.join(" ")
        );
    }
    Ok(())
}

fn check_symmetry(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidConfig(format!(
            "{name} must be square, got {:?}",
            m.shape()
        )));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::InvalidConfig(format!(
                    "{name} is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

fn cmd_solve_eig(args: &SolveEigArgs) -> Result<()> {
    let a = read_matrix(&args.a_matrix, args.delimiter)?;
    let b = read_matrix(&args.b_matrix, args.delimiter)?;
    check_symmetry(&a, "A")?;
    check_symmetry(&b, "B")?;
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let d = a.nrows();
    let pencil = Pencil::new(
        Arc::new(DenseSymOp::new(a)?),
        Arc::new(DenseSymOp::new(b)?),
        BlockLayout::single(d),
    )?;
    let config = args.solver.to_config();
    let result = loecg(&pencil, &config)?;
    println!("rho {:.16e}", result.rho);
    println!("residual {:.16e}", result.residual);
    println!("iterations {}", result.iters);
    println!("converged {}", result.converged);
    if let Some(path) = &args.out_vector {
        let x = DMatrix::from_column_slice(result.x.len(), 1, result.x.as_slice());
        write_matrix(path, &x, args.delimiter)?;
    }
    if !result.converged {
        return Err(Error::NotConverged {
            iterations: result.iters,
            residual: result.residual,
        });
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let dims: Vec<usize> = parse_grid(&args.dims, "dims")?;
    let ks: Vec<usize> = parse_grid(&args.ks, "ks")?;
    let config = args.solver.to_config();
    let report = crate::bench::run_bench(&dims, &ks, config.seed, &config)?;
    println!("# matvec scaling (synthetic two-view problem)");
    println!("k,matvecs,wall_secs");
    let mut table = String::from("kind,param,value,extra\n");
    for p in &report.matvec_points {
        println!("{},{},{:.6}", p.k, p.matvecs, p.wall_secs);
        table.push_str(&format!(
            "matvec,{},{},{:.6e}\n",
            p.k, p.matvecs, p.wall_secs
        ));
    }
    println!("# apply-time scaling (dense operators)");
    println!("d,ns_per_apply");
    for p in &report.apply_points {
        println!("{},{:.1}", p.d, p.nanos_per_apply);
        table.push_str(&format!("apply,{},{:.1},\n", p.d, p.nanos_per_apply));
    }
    println!("k_exponent {:.3}", report.k_exponent);
    println!("d_exponent {:.3}", report.d_exponent);
    println!("total_secs {:.3}", report.total_secs);
    if let Some(path) = &args.out {
        std::fs::write(path, table).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<()> {
    let bundle = load_bundle(&args.bundle)?;
    if !bundle.meta.orthogonal {
        println!(
            "bundle {} holds a ratio-trace model ({}); orthonormality not expected",
            args.bundle.display(),
            bundle.meta.model
        );
        return Ok(());
    }
    let mut worst = 0.0f64;
    for (view, p) in bundle.meta.views.iter().zip(&bundle.projections) {
        let gram = p.tr_mul(p);
        let dev = (gram - DMatrix::identity(p.ncols(), p.ncols())).amax();
        println!("view {}: |P'P - I|_max = {:.3e}", view.id, dev);
        worst = worst.max(dev);
    }
    if worst > args.tol {
        return Err(Error::InvalidConfig(format!(
            "orthonormality deviation {worst:.3e} exceeds tolerance {:.3e}",
            args.tol
        )));
    }
    println!("verify ok (worst deviation {worst:.3e})");
    Ok(())
}
