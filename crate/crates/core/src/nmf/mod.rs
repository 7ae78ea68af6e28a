//! Sparse non-negative matrix factorization by multiplicative updates.
//!
//! Factorizes a patient-by-covariate count matrix X (n x m) into
//! non-negative W (n x k) and H (k x m) minimizing the Frobenius
//! reconstruction error. The dense product WH is never materialized: every
//! kernel walks the stored entries of X plus k x k Gram matrices, so cost
//! per iteration is O(nnz * k + (n + m) * k^2).
//!
//! Runs are bit-reproducible for a given seed: initialization draws from a
//! counter-based stream, and every reduction uses a fixed summation order
//! regardless of thread count (parallel chunks have fixed boundaries and
//! are merged sequentially in chunk order).

pub mod io;

use rand::Rng;
use rayon::prelude::*;

use crate::cohort::CohortMatrix;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::seed;

/// Multiplicative-update denominators are floored at this value.
const DENOM_FLOOR: f64 = 1e-12;
/// The relative-decrease convergence test runs every this many iterations.
const CHECK_INTERVAL: usize = 10;
/// Rows per chunk in the deterministic parallel reductions.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl FitOptions {
    /// Defaults: 200 iterations maximum, relative tolerance 1e-4.
    pub fn new(k: usize, seed: u64) -> FitOptions {
        FitOptions {
            k,
            seed,
            max_iter: 200,
            tol: 1e-4,
        }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> FitOptions {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> FitOptions {
        self.tol = tol;
        self
    }
}

/// A fitted factor pair with its training diagnostics.
#[derive(Debug, Clone)]
pub struct FactorModel {
    /// Patient loadings, n x k.
    pub w: DenseMatrix,
    /// Covariate coefficients, k x m.
    pub h: DenseMatrix,
    pub k: usize,
    pub seed: u64,
    /// Update iterations actually performed.
    pub n_iterations: usize,
    /// Frobenius error after the last iteration.
    pub final_error: f64,
    /// Error trace: entry 0 is the error of the random initialization,
    /// entry t the error after iteration t. Non-increasing.
    pub error_history: Vec<f64>,
}

/// Reconstruction error per component count, for elbow selection.
#[derive(Debug, Clone)]
pub struct ErrorCurve {
    entries: Vec<(usize, f64)>,
    seed: u64,
}

impl ErrorCurve {
    /// Entries must have strictly increasing component counts and finite,
    /// non-negative errors.
    pub fn from_entries(entries: Vec<(usize, f64)>, curve_seed: u64) -> Result<ErrorCurve> {
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidParameter(
                    "error curve component counts must be strictly increasing".into(),
                ));
            }
        }
        if entries.iter().any(|&(_, e)| !e.is_finite() || e < 0.0) {
            return Err(Error::NonFinite("error curve"));
        }
        Ok(ErrorCurve { entries, seed: curve_seed })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Picks the component count with the largest discrete curvature
    /// e(k-1) - 2e(k) + e(k+1); ties resolve toward the smallest k. The
    /// curve must cover at least three consecutive component counts.
    pub fn elbow(&self) -> Result<ElbowChoice> {
        if self.entries.len() < 3 {
            return Err(Error::CurveTooShort(self.entries.len()));
        }
        for pair in self.entries.windows(2) {
            if pair[1].0 != pair[0].0 + 1 {
                return Err(Error::CurveNotConsecutive(pair[0].0));
            }
        }
        let mut best: Option<(usize, f64)> = None;
        let mut best_count = 0usize;
        for idx in 1..self.entries.len() - 1 {
            let curvature =
                self.entries[idx - 1].1 - 2.0 * self.entries[idx].1 + self.entries[idx + 1].1;
            match best {
                None => {
                    best = Some((self.entries[idx].0, curvature));
                    best_count = 1;
                }
                Some((_, b)) if curvature > b => {
                    best = Some((self.entries[idx].0, curvature));
                    best_count = 1;
                }
                Some((_, b)) if curvature == b => best_count += 1,
                _ => {}
            }
        }
        let (k, _) = best.expect("at least one interior entry");
        Ok(ElbowChoice {
            k,
            distinct: best_count == 1,
        })
    }
}

/// Elbow selection outcome. `distinct` is false when the maximal curvature
/// is attained at more than one component count (e.g. an exactly linear
/// curve), in which case `k` is the smallest interior candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElbowChoice {
    pub k: usize,
    pub distinct: bool,
}

/// Compressed sparse column view of the cohort, built once per fit so that
/// every H column can be updated independently.
struct Csc {
    col_offsets: Vec<usize>,
    row_indices: Vec<usize>,
    values: Vec<f64>,
}

fn build_csc(x: &CohortMatrix) -> Csc {
    let m = x.n_covariates();
    let mut col_offsets = vec![0usize; m + 1];
    for &j in x.column_indices() {
        col_offsets[j + 1] += 1;
    }
    for j in 0..m {
        col_offsets[j + 1] += col_offsets[j];
    }
    let mut cursor = col_offsets.clone();
    let mut row_indices = vec![0usize; x.nnz()];
    let mut values = vec![0f64; x.nnz()];
    for i in 0..x.n_patients() {
        let (cols, vals) = x.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            row_indices[cursor[j]] = i;
            values[cursor[j]] = v as f64;
            cursor[j] += 1;
        }
    }
    Csc {
        col_offsets,
        row_indices,
        values,
    }
}

/// Gram matrix M^T M (k x k) of a row-major (rows x k) matrix, reduced in
/// fixed chunk order.
fn gram(mat: &DenseMatrix) -> Vec<f64> {
    let k = mat.n_cols();
    let partials: Vec<Vec<f64>> = mat
        .data()
        .par_chunks(CHUNK * k)
        .map(|chunk| {
            let mut g = vec![0.0; k * k];
            for row in chunk.chunks_exact(k) {
                for a in 0..k {
                    let ra = row[a];
                    if ra != 0.0 {
                        let dst = &mut g[a * k..(a + 1) * k];
                        for (d, &rb) in dst.iter_mut().zip(row) {
                            *d += ra * rb;
                        }
                    }
                }
            }
            g
        })
        .collect();
    let mut g = vec![0.0; k * k];
    for p in partials {
        for (gi, pi) in g.iter_mut().zip(p) {
            *gi += pi;
        }
    }
    g
}

/// H update: H <- H * (W^T X) / (W^T W H), column-local. `ht` holds H
/// transposed (m x k) so each row of `ht` is one column of H.
fn update_ht(ht: &mut DenseMatrix, csc: &Csc, w: &DenseMatrix, g_w: &[f64]) {
    let k = ht.n_cols();
    ht.data_mut()
        .par_chunks_mut(k)
        .enumerate()
        .for_each_init(
            || (vec![0.0; k], vec![0.0; k]),
            |(num, den), (j, hrow)| {
                num.iter_mut().for_each(|v| *v = 0.0);
                let span = csc.col_offsets[j]..csc.col_offsets[j + 1];
                for (&i, &v) in csc.row_indices[span.clone()].iter().zip(&csc.values[span]) {
                    let wrow = w.row(i);
                    for (nc, &wc) in num.iter_mut().zip(wrow) {
                        *nc += v * wc;
                    }
                }
                for c in 0..k {
                    let row_g = &g_w[c * k..(c + 1) * k];
                    let mut d = 0.0;
                    for (&ga, &ha) in row_g.iter().zip(hrow.iter()) {
                        d += ga * ha;
                    }
                    den[c] = d;
                }
                for c in 0..k {
                    hrow[c] *= num[c] / den[c].max(DENOM_FLOOR);
                }
            },
        );
}

/// W update: W <- W * (X H^T) / (W H H^T), row-local.
fn update_w(w: &mut DenseMatrix, x: &CohortMatrix, ht: &DenseMatrix, g_h: &[f64]) {
    let k = w.n_cols();
    w.data_mut()
        .par_chunks_mut(k)
        .enumerate()
        .for_each_init(
            || (vec![0.0; k], vec![0.0; k]),
            |(num, den), (i, wrow)| {
                num.iter_mut().for_each(|v| *v = 0.0);
                let (cols, vals) = x.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    let v = v as f64;
                    let hrow = ht.row(j);
                    for (nc, &hc) in num.iter_mut().zip(hrow) {
                        *nc += v * hc;
                    }
                }
                for c in 0..k {
                    let mut d = 0.0;
                    for (a, &wa) in wrow.iter().enumerate() {
                        d += wa * g_h[a * k + c];
                    }
                    den[c] = d;
                }
                for c in 0..k {
                    wrow[c] *= num[c] / den[c].max(DENOM_FLOOR);
                }
            },
        );
}

/// <X, WH> over stored entries, reduced in fixed chunk order.
fn inner_product(x: &CohortMatrix, w: &DenseMatrix, ht: &DenseMatrix) -> f64 {
    let n = x.n_patients();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partials: Vec<f64> = starts
        .par_iter()
        .map(|&start| {
            let mut s = 0.0;
            for i in start..(start + CHUNK).min(n) {
                let (cols, vals) = x.row(i);
                let wrow = w.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    let hrow = ht.row(j);
                    let mut dot = 0.0;
                    for (&wc, &hc) in wrow.iter().zip(hrow) {
                        dot += wc * hc;
                    }
                    s += v as f64 * dot;
                }
            }
            s
        })
        .collect();
    partials.iter().sum()
}

fn norm_sq(x: &CohortMatrix) -> f64 {
    x.values().iter().map(|&v| (v as f64) * (v as f64)).sum()
}

/// ||X - WH||_F from ||X||_F^2 - 2<X,WH> + sum(G_w * G_h); clamped at zero
/// against cancellation.
fn frobenius_error(norm_x_sq: f64, inner: f64, g_w: &[f64], g_h: &[f64]) -> f64 {
    let wh_sq: f64 = g_w.iter().zip(g_h).map(|(&a, &b)| a * b).sum();
    (norm_x_sq - 2.0 * inner + wh_sq).max(0.0).sqrt()
}

/// Frobenius reconstruction error of an arbitrary factor pair against the
/// sparse matrix, computed without materializing WH.
pub fn reconstruction_error(x: &CohortMatrix, w: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    if w.n_rows() != x.n_patients() || h.n_cols() != x.n_covariates() || w.n_cols() != h.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "X is {}x{}, W is {}x{}, H is {}x{}",
            x.n_patients(),
            x.n_covariates(),
            w.n_rows(),
            w.n_cols(),
            h.n_rows(),
            h.n_cols()
        )));
    }
    let ht = h.transposed();
    let err = frobenius_error(norm_sq(x), inner_product(x, w, &ht), &gram(w), &gram(&ht));
    if !err.is_finite() {
        return Err(Error::NonFinite("reconstruction error"));
    }
    Ok(err)
}

/// Fits W, H >= 0 by multiplicative updates from a seeded uniform
/// initialization scaled to sqrt(mean(X)/k). Stops after `max_iter`
/// iterations or when the relative error decrease between checks (every 10
/// iterations) falls below `tol`. An all-zero matrix yields zero factors.
pub fn fit(x: &CohortMatrix, options: FitOptions) -> Result<FactorModel> {
    let (n, m) = (x.n_patients(), x.n_covariates());
    let limit = n.min(m);
    if options.k == 0 || options.k > limit {
        return Err(Error::ComponentCountOutOfRange { k: options.k, limit });
    }
    if options.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    if !options.tol.is_finite() || options.tol < 0.0 {
        return Err(Error::InvalidParameter(format!("bad tolerance {}", options.tol)));
    }
    let k = options.k;
    if x.nnz() == 0 {
        return Ok(FactorModel {
            w: DenseMatrix::zeros(n, k),
            h: DenseMatrix::zeros(k, m),
            k,
            seed: options.seed,
            n_iterations: 0,
            final_error: 0.0,
            error_history: vec![0.0],
        });
    }

    let mean = x.total_count() as f64 / (n as f64 * m as f64);
    let scale = (mean / k as f64).sqrt();
    let mut rng = seed::stream(options.seed);
    let mut w = DenseMatrix::zeros(n, k);
    for v in w.data_mut() {
        // 1 - u maps the generator's [0,1) onto (0,1]: no exact zeros.
        *v = scale * (1.0 - rng.random::<f64>());
    }
    let mut h_init = vec![0.0; k * m];
    for v in &mut h_init {
        *v = scale * (1.0 - rng.random::<f64>());
    }
    let mut ht = DenseMatrix::zeros(m, k);
    for c in 0..k {
        for j in 0..m {
            ht.set(j, c, h_init[c * m + j]);
        }
    }

    let csc = build_csc(x);
    let norm_x_sq = norm_sq(x);
    let mut g_w = gram(&w);
    let initial_error = frobenius_error(norm_x_sq, inner_product(x, &w, &ht), &g_w, &gram(&ht));
    let mut error_history = Vec::with_capacity(options.max_iter + 1);
    error_history.push(initial_error);

    let mut last_check = initial_error;
    let mut n_iterations = 0;
    for iteration in 1..=options.max_iter {
        update_ht(&mut ht, &csc, &w, &g_w);
        let g_h = gram(&ht);
        update_w(&mut w, x, &ht, &g_h);
        g_w = gram(&w);
        let error = frobenius_error(norm_x_sq, inner_product(x, &w, &ht), &g_w, &g_h);
        error_history.push(error);
        n_iterations = iteration;
        if iteration % CHECK_INTERVAL == 0 {
            if last_check <= f64::MIN_POSITIVE
                || (last_check - error) / last_check < options.tol
            {
                break;
            }
            last_check = error;
        }
    }

    let final_error = *error_history.last().expect("history non-empty");
    if !final_error.is_finite() || w.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("factorization"));
    }
    let mut h = DenseMatrix::zeros(k, m);
    for j in 0..m {
        let hrow = ht.row(j);
        for c in 0..k {
            h.set(c, j, hrow[c]);
        }
    }
    Ok(FactorModel {
        w,
        h,
        k,
        seed: options.seed,
        n_iterations,
        final_error,
        error_history,
    })
}

/// Fits every component count in `k_min..=k_max` with the same seed and
/// records the final errors.
pub fn sweep_k(
    x: &CohortMatrix,
    k_min: usize,
    k_max: usize,
    options: FitOptions,
) -> Result<ErrorCurve> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::InvalidParameter(format!(
            "bad sweep range {k_min}..={k_max}"
        )));
    }
    let limit = x.n_patients().min(x.n_covariates());
    if k_max > limit {
        return Err(Error::ComponentCountOutOfRange { k: k_max, limit });
    }
    let mut entries = Vec::with_capacity(k_max - k_min + 1);
    for k in k_min..=k_max {
        let model = fit(x, FitOptions { k, ..options })?;
        entries.push((k, model.final_error));
    }
    ErrorCurve::from_entries(entries, options.seed)
}
