//! Scaling benchmarks: operator applications per projection column and
//! apply time against problem dimension.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::eigsolve::{Pencil, SolverConfig};
use crate::error::Result;
use crate::eval::synth_multiview;
use crate::linop::{CountingOp, DenseSymOp, SymmetricOperator};
use crate::models::{instantiate, ModelKind, ModelSpec};
use crate::osave::{osave, DegeneracyPolicy};

#[derive(Debug, Clone)]
pub struct MatvecPoint {
    pub k: usize,
    pub matvecs: u64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone)]
pub struct ApplyPoint {
    pub d: usize,
    pub nanos_per_apply: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub matvec_points: Vec<MatvecPoint>,
    pub apply_points: Vec<ApplyPoint>,
    /// Fitted log-log slope of matvec count against k.
    pub k_exponent: f64,
    /// Fitted log-log slope of apply time against d.
    pub d_exponent: f64,
    pub total_secs: f64,
}

fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Count total operator applications of an OSAVE run at each k on a fixed
/// synthetic two-view correlation problem.
pub fn matvec_scaling(ks: &[usize], seed: u64, config: &SolverConfig) -> Result<Vec<MatvecPoint>> {
    let ds = synth_multiview(seed, 2, 4, 30, &[40, 40], 1.0)?;
    let spec = ModelSpec::new(ModelKind::Omcca, 1.0, 1e-8, 1)?;
    let inst = instantiate(&ds, &spec)?;
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let counter = Arc::new(AtomicU64::new(0));
        let a: Arc<dyn SymmetricOperator> =
            Arc::new(CountingOp::new(inst.pencil.a.clone(), counter.clone()));
        let b: Arc<dyn SymmetricOperator> =
            Arc::new(CountingOp::new(inst.pencil.b.clone(), counter.clone()));
        let pencil = Pencil::new_unchecked(a, b, inst.pencil.block_sizes.clone());
        let start = Instant::now();
        osave(&pencil, k, config, DegeneracyPolicy::FillDeterministic)?;
        points.push(MatvecPoint {
            k,
            matvecs: counter.load(Ordering::Relaxed),
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }
    Ok(points)
}

/// Mean apply time of a dense symmetric operator at each dimension.
pub fn apply_scaling(dims: &[usize], seed: u64) -> Vec<ApplyPoint> {
    let mut points = Vec::with_capacity(dims.len());
    for &d in dims {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ d as u64);
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sym = (&g + g.transpose()) * 0.5;
        let op = DenseSymOp::new(sym).expect("square");
        let x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Repetitions scaled to keep each point around a few milliseconds.
        let reps = (2_000_000_000 / (d * d)).clamp(50, 20_000);
        let mut sink = 0.0;
        for _ in 0..reps / 10 {
            sink += op.apply(&x)[0]; // warmup
        }
        let start = Instant::now();
        for _ in 0..reps {
            sink += op.apply(&x)[0];
        }
        let elapsed = start.elapsed().as_nanos() as f64;
        std::hint::black_box(sink);
        points.push(ApplyPoint {
            d,
            nanos_per_apply: elapsed / reps as f64,
        });
    }
    points
}

/// Run both scaling studies and fit the log-log exponents.
pub fn run_bench(
    dims: &[usize],
    ks: &[usize],
    seed: u64,
    config: &SolverConfig,
) -> Result<BenchReport> {
    let start = Instant::now();
    let matvec_points = matvec_scaling(ks, seed, config)?;
    let apply_points = apply_scaling(dims, seed);
    let k_exponent = loglog_slope(
        &matvec_points
            .iter()
            .map(|p| (p.k as f64, p.matvecs as f64))
            .collect::<Vec<_>>(),
    );
    let d_exponent = loglog_slope(
        &apply_points
            .iter()
            .map(|p| (p.d as f64, p.nanos_per_apply))
            .collect::<Vec<_>>(),
    );
    Ok(BenchReport {
        matvec_points,
        apply_points,
        k_exponent,
        d_exponent,
        total_secs: start.elapsed().as_secs_f64(),
    })
}
