//! Rank-weighted coefficients: covariate importance from NMF coefficients.
//!
//! Within each component, covariates are ranked by descending coefficient
//! (rank 1 = largest; ties break toward the lower column index, so every
//! covariate holds a distinct rank in every component). The weight of
//! covariate j is the rank-discounted average of its coefficients,
//!
//!   w_j = sum_i H_ij / r_ij  /  sum_i 1 / r_ij,
//!
//! a convex combination of the column entries that favors components where
//! the covariate ranks high. Ensemble weights average w over independently
//! seeded factorization runs; the threshold for selection is the mean of
//! the strictly positive ensemble weights, inclusive.

use crate::cohort::CohortMatrix;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::nmf::{fit, FitOptions};

/// Ensemble covariate weights plus the derived selection.
#[derive(Debug, Clone)]
pub struct FeatureWeights {
    weights: Vec<f64>,
    n_runs: usize,
    seeds: Vec<u64>,
    mean_nonzero_rwc: f64,
    selected: Vec<usize>,
}

impl FeatureWeights {
    /// Wraps a weight vector, computing the positive-mean threshold and
    /// the selected set. Rejects an all-zero vector: that only arises when
    /// the factorization produced an empty coefficient matrix.
    pub fn from_weights(weights: Vec<f64>, n_runs: usize, seeds: Vec<u64>) -> Result<FeatureWeights> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("weight vector"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFinite("covariate weights"));
        }
        let (selected, mean_nonzero_rwc) = select_from_weights(&weights)?;
        Ok(FeatureWeights {
            weights,
            n_runs,
            seeds,
            mean_nonzero_rwc,
            selected,
        })
    }

    /// Per-covariate ensemble weights over the full universe.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// Mean of the strictly positive weights; the selection threshold.
    pub fn mean_nonzero_rwc(&self) -> f64 {
        self.mean_nonzero_rwc
    }

    /// Selected columns, ordered by descending weight (ties by ascending
    /// column index).
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// (column, weight) pairs of the selection, in selection order.
    pub fn selected_weights(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.selected.iter().map(move |&j| (j, self.weights[j]))
    }
}

/// Distinct descending ranks of one coefficient row: rank 1 for the
/// largest value, ties toward the lower column index.
fn ranks_desc(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .expect("coefficients are finite")
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0usize; row.len()];
    for (pos, &j) in order.iter().enumerate() {
        ranks[j] = pos + 1;
    }
    ranks
}

/// Rank-weighted coefficient of every covariate for one fitted H.
///
/// `w_j` is zero exactly when column j of H is entirely zero.
pub fn rwc_single(h: &DenseMatrix) -> Result<Vec<f64>> {
    if h.n_rows() == 0 || h.n_cols() == 0 {
        return Err(Error::EmptyInput("coefficient matrix"));
    }
    if h.iter().any(|v| !v.is_finite() || v < 0.0) {
        return Err(Error::NonFinite("coefficient matrix"));
    }
    let m = h.n_cols();
    let mut numer = vec![0.0; m];
    let mut denom = vec![0.0; m];
    for row in h.rows() {
        let ranks = ranks_desc(row);
        for j in 0..m {
            let inv = 1.0 / ranks[j] as f64;
            numer[j] += row[j] * inv;
            denom[j] += inv;
        }
    }
    Ok(numer.iter().zip(&denom).map(|(&n, &d)| n / d).collect())
}

/// Fits `n_runs` factorizations with seeds `base, base+1, ...` (base taken
/// from `template.seed`) and averages the per-run rank-weighted
/// coefficients into ensemble weights. Every run enters the mean, zeros
/// included.
pub fn rwc_ensemble(
    x: &CohortMatrix,
    template: FitOptions,
    n_runs: usize,
) -> Result<FeatureWeights> {
    if n_runs == 0 {
        return Err(Error::InvalidParameter("ensemble needs at least one run".into()));
    }
    let mut sum = vec![0.0; x.n_covariates()];
    let mut seeds = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let run_seed = template.seed.wrapping_add(run as u64);
        seeds.push(run_seed);
        let model = fit(x, FitOptions { seed: run_seed, ..template })?;
        let w = rwc_single(&model.h)?;
        for (s, v) in sum.iter_mut().zip(w) {
            *s += v;
        }
    }
    let inv = 1.0 / n_runs as f64;
    for s in &mut sum {
        *s *= inv;
    }
    FeatureWeights::from_weights(sum, n_runs, seeds)
}

/// Selection rule: keep covariates whose weight is at least the mean of
/// the strictly positive weights (inclusive), ordered by descending
/// weight. Returns the ordered columns and the threshold.
pub fn select_from_weights(weights: &[f64]) -> Result<(Vec<usize>, f64)> {
    let positives: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    if positives.is_empty() {
        return Err(Error::AllZeroWeights);
    }
    let threshold = positives.iter().sum::<f64>() / positives.len() as f64;
    let mut selected: Vec<usize> = weights
        .iter()
        .enumerate()
        .filter(|&(_, &w)| w >= threshold)
        .map(|(j, _)| j)
        .collect();
    selected.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .expect("weights are finite")
            .then(a.cmp(&b))
    });
    Ok((selected, threshold))
}
