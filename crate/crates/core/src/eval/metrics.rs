//! The five multi-label ranking/classification metrics.
//!
//! Conventions are pinned for determinism: ranks are assigned by descending
//! score with ties broken by ascending label index; ranking-loss ties count
//! half; coverage is the 0-based max rank of any relevant label (0 when an
//! instance has no relevant label); instances whose label set is empty or
//! full are skipped for Ranking Loss, One Error, and Average Precision and
//! contribute their definitional value to Hamming Loss and Coverage.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// `(name, higher_is_better)` per metric, in report order.
pub const METRIC_NAMES: [(&str, bool); 5] = [
    ("hamming_loss", false),
    ("ranking_loss", false),
    ("one_error", false),
    ("coverage", false),
    ("average_precision", true),
];

/// The five multi-label metrics of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub hamming_loss: f64,
    pub ranking_loss: f64,
    pub one_error: f64,
    pub coverage: f64,
    pub average_precision: f64,
}

impl MetricsReport {
    pub fn values(&self) -> [f64; 5] {
        [
            self.hamming_loss,
            self.ranking_loss,
            self.one_error,
            self.coverage,
            self.average_precision,
        ]
    }
}

/// Ranks per label: descending score, ties by ascending label index.
/// `rank[r]` is 1-based.
fn ranks_of(scores: &[f64]) -> Vec<usize> {
    let c = scores.len();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .expect("finite scores")
            .then(i.cmp(&j))
    });
    let mut rank = vec![0usize; c];
    for (pos, &label) in order.iter().enumerate() {
        rank[label] = pos + 1;
    }
    rank
}

/// Compute all five metrics from score, prediction, and truth matrices,
/// each `c x m` with one instance per column.
pub fn multilabel_metrics(
    scores: &DMatrix<f64>,
    predictions: &DMatrix<f64>,
    truth: &DMatrix<f64>,
) -> Result<MetricsReport> {
    let (c, m) = scores.shape();
    if predictions.shape() != (c, m) || truth.shape() != (c, m) {
        return Err(Error::DimensionMismatch {
            expected: c * m,
            got: predictions.len(),
        });
    }
    if m == 0 || c == 0 {
        return Err(Error::InvalidDataset(
            "metrics need labels and instances".into(),
        ));
    }
    if truth.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidLabels("truth matrix must be binary".into()));
    }

    let mut hamming_sum = 0.0;
    let mut coverage_sum = 0.0;
    let mut rl_sum = 0.0;
    let mut oe_sum = 0.0;
    let mut ap_sum = 0.0;
    let mut counted = 0usize;

    for i in 0..m {
        let col_scores: Vec<f64> = scores.column(i).iter().copied().collect();
        let relevant: Vec<usize> = (0..c).filter(|&r| truth[(r, i)] == 1.0).collect();
        let nrel = relevant.len();

        // Hamming: symmetric-difference fraction of this instance.
        let mismatches = (0..c)
            .filter(|&r| (predictions[(r, i)] != 0.0) != (truth[(r, i)] != 0.0))
            .count();
        hamming_sum += mismatches as f64 / c as f64;

        let rank = ranks_of(&col_scores);

        // Coverage: 0-based max rank over relevant labels, 0 when none.
        let max_rank = relevant.iter().map(|&r| rank[r]).max().unwrap_or(0);
        coverage_sum += if max_rank == 0 {
            0.0
        } else {
            (max_rank - 1) as f64
        };

        if nrel == 0 || nrel == c {
            continue;
        }
        counted += 1;

        // One error: is the rank-1 label irrelevant?
        let top = rank.iter().position(|&r| r == 1).expect("rank 1 exists");
        oe_sum += if truth[(top, i)] == 1.0 { 0.0 } else { 1.0 };

        // Ranking loss through sorted irrelevant scores: for each relevant
        // label count the strictly-higher and the tied irrelevant scores.
        let mut irrelevant_scores: Vec<f64> = (0..c)
            .filter(|&r| truth[(r, i)] == 0.0)
            .map(|r| col_scores[r])
            .collect();
        irrelevant_scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
        let nirr = irrelevant_scores.len();
        let mut wrong = 0usize;
        let mut ties = 0usize;
        for &r in &relevant {
            let s = col_scores[r];
            let upper = irrelevant_scores.partition_point(|&v| v <= s);
            let lower = irrelevant_scores.partition_point(|&v| v < s);
            wrong += nirr - upper;
            ties += upper - lower;
        }
        rl_sum += (wrong as f64 + 0.5 * ties as f64) / (nrel * nirr) as f64;

        // Average precision via sorted relevant ranks.
        let mut rel_ranks: Vec<usize> = relevant.iter().map(|&r| rank[r]).collect();
        rel_ranks.sort_unstable();
        let mut ap_i = 0.0;
        for &r in &relevant {
            let leq = rel_ranks.partition_point(|&v| v <= rank[r]);
            ap_i += leq as f64 / rank[r] as f64;
        }
        ap_sum += ap_i / nrel as f64;
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

    Ok(MetricsReport {
        hamming_loss: hamming_sum / m as f64,
        ranking_loss,
        one_error,
        coverage: coverage_sum / m as f64,
        average_precision,
    })
}
