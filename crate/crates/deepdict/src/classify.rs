//! Nearest-neighbor evaluation of learned features.
//!
//! Distances are squared Euclidean (monotone-equivalent to Euclidean and
//! cheaper). Near-ties within 1e-12 relative are treated as exact ties and
//! resolved toward the lowest training column index, which keeps results
//! reproducible across summation orders. Test columns are searched in
//! parallel with results identical to the sequential order.

use std::time::Instant;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::linalg::{map_chunks, COL_CHUNK};

/// Outcome of scoring predictions against ground truth.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Fraction of exact label matches, in `[0, 1]`.
    pub accuracy: f64,
    pub num_test: usize,
    pub num_errors: usize,
    /// Wall-clock seconds of the search, zero when only counting.
    pub elapsed: f64,
}

#[inline]
fn dist_sq(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    if let (Some(x), Some(y)) = (a.as_slice(), b.as_slice()) {
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - q) * (p - q))
            .sum()
    } else {
        a.iter()
            .zip(b.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum()
    }
}

/// Label each test column with the label of its nearest training column.
pub fn knn1_classify(
    train: &Array2<f64>,
    train_labels: &[u32],
    test: &Array2<f64>,
) -> Result<Vec<u32>> {
    if train.ncols() == 0 {
        return Err(Error::InvalidParam("empty training set".into()));
    }
    if train_labels.len() != train.ncols() {
        return Err(Error::Dimension(format!(
            "{} training samples but {} labels",
            train.ncols(),
            train_labels.len()
        )));
    }
    if train.nrows() != test.nrows() {
        return Err(Error::Dimension(format!(
            "training features have {} dims but test features have {}",
            train.nrows(),
            test.nrows()
        )));
    }
    let chunks: Vec<_> = test.axis_chunks_iter(Axis(1), COL_CHUNK).collect();
    let per_chunk = map_chunks(chunks, |tc| {
        let mut out = Vec::with_capacity(tc.ncols());
        for probe in tc.axis_iter(Axis(1)) {
            let mut best = dist_sq(train.column(0), probe);
            let mut best_idx = 0usize;
            for j in 1..train.ncols() {
                let d = dist_sq(train.column(j), probe);
                // replace only on a clear improvement; near-ties keep the
                // lower index
                if d < best && best - d > 1e-12 * best {
                    best = d;
                    best_idx = j;
                }
            }
            out.push(train_labels[best_idx]);
        }
        out
    });
    Ok(per_chunk.into_iter().flatten().collect())
}

/// Score predictions against ground truth. `elapsed` is zero; use
/// [`evaluate_knn1`] for a timed end-to-end evaluation.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidParam("nothing to score".into()));
    }
    let matches = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    let n = pred.len();
    Ok(EvalReport {
        accuracy: matches as f64 / n as f64,
        num_test: n,
        num_errors: n - matches,
        elapsed: 0.0,
    })
}

/// Classify and score in one call, timing the search.
pub fn evaluate_knn1(
    train: &Array2<f64>,
    train_labels: &[u32],
    test: &Array2<f64>,
    test_labels: &[u32],
) -> Result<EvalReport> {
    let t0 = Instant::now();
    let pred = knn1_classify(train, train_labels, test)?;
    let mut report = accuracy(&pred, test_labels)?;
    report.elapsed = t0.elapsed().as_secs_f64();
    Ok(report)
}
