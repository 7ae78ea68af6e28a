//! A small logistic-regression probe trained with stochastic gradient
//! descent, plus stratified cross-validation around it.
//!
//! The probe is deliberately plain: presence-coded features, per-sample
//! updates with L2 shrinkage, a fixed learning rate, and seeded epoch
//! shuffles so that repeated runs are bit-identical.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::CohortMatrix;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::seed::{self, stage};
use crate::validation::metrics::{classification_metrics, ClassificationMetrics};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Presence-coded feature matrix: one column per requested covariate,
/// 1.0 where the patient has any positive count.
pub fn presence_features(matrix: &CohortMatrix, features: &[usize]) -> Result<DenseMatrix> {
    if features.is_empty() {
        return Err(Error::EmptyInput("classifier feature set"));
    }
    let universe = matrix.n_covariates();
    for &j in features {
        if j >= universe {
            return Err(Error::CovariateOutOfRange { index: j, universe });
        }
    }
    let mut out = DenseMatrix::zeros(matrix.n_patients(), features.len());
    for i in 0..matrix.n_patients() {
        let (cols, _) = matrix.row(i);
        for (slot, &j) in features.iter().enumerate() {
            if cols.binary_search(&j).is_ok() {
                out.set(i, slot, 1.0);
            }
        }
    }
    Ok(out)
}

/// Row-wise concatenation of two feature matrices with equal width.
pub fn stack_rows(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_cols() != b.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "cannot stack {}-column rows onto {}-column rows",
            b.n_cols(),
            a.n_cols()
        )));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    DenseMatrix::from_vec(a.n_rows() + b.n_rows(), a.n_cols(), data)
}

/// Gradient-descent settings for the logistic probe.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(seed: u64) -> TrainOptions {
        TrainOptions {
            learning_rate: 0.1,
            epochs: 300,
            l2: 1e-3,
            seed,
        }
    }

    pub fn with_learning_rate(mut self, learning_rate: f64) -> TrainOptions {
        self.learning_rate = learning_rate;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> TrainOptions {
        self.epochs = epochs;
        self
    }

    pub fn with_l2(mut self, l2: f64) -> TrainOptions {
        self.l2 = l2;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> TrainOptions {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "L2 strength must be non-negative, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Trained logistic model: a weight per feature plus a bias.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    weights: Vec<f64>,
    bias: f64,
}

impl LogisticModel {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Predicted probability of the positive class.
    pub fn predict(&self, features: &[f64]) -> f64 {
        let z: f64 = self
            .weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

/// Fits the probe by per-sample gradient descent with seeded epoch
/// shuffles.
pub fn train_logistic(
    features: &DenseMatrix,
    labels: &[bool],
    options: &TrainOptions,
) -> Result<LogisticModel> {
    options.validate()?;
    if features.n_rows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            features.n_rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if features.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier features"));
    }
    let d = features.n_cols();
    let mut weights = vec![0.0; d];
    let mut bias = 0.0;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut rng = seed::stream(options.seed);
    for _ in 0..options.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let row = features.row(i);
            let p = sigmoid(
                weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + bias,
            );
            let g = p - if labels[i] { 1.0 } else { 0.0 };
            for (w, &x) in weights.iter_mut().zip(row) {
                *w -= options.learning_rate * (g * x + options.l2 * *w);
            }
            bias -= options.learning_rate * g;
        }
    }
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::NonFinite("trained classifier weights"));
    }
    Ok(LogisticModel { weights, bias })
}

/// Splits indices into `k` folds with near-equal class counts: each class
/// is shuffled and dealt round-robin.
pub fn stratified_folds(
    labels: &[bool],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "cross-validation needs at least 2 folds, got {k}"
        )));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(Error::InvalidParameter(format!(
            "each class must fill every fold: {} positives and {} negatives for {k} folds",
            pos.len(),
            neg.len()
        )));
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut folds = vec![Vec::new(); k];
    for (slot, idx) in pos.into_iter().enumerate() {
        folds[slot % k].push(idx);
    }
    for (slot, idx) in neg.into_iter().enumerate() {
        folds[slot % k].push(idx);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Repeated cross-validation metrics: one entry per repetition plus the
/// per-field mean and 95% confidence half-width.
#[derive(Debug, Clone)]
pub struct RepeatedCvResult {
    pub per_repetition: Vec<ClassificationMetrics>,
    pub mean: ClassificationMetrics,
    pub ci_half_width: ClassificationMetrics,
}

/// Runs `n_repetitions` rounds of `n_folds`-fold stratified
/// cross-validation; each repetition re-deals the folds and scores the
/// pooled out-of-fold predictions.
pub fn cross_validate(
    features: &DenseMatrix,
    labels: &[bool],
    n_folds: usize,
    n_repetitions: usize,
    train: &TrainOptions,
    seed: u64,
) -> Result<RepeatedCvResult> {
    if n_repetitions == 0 {
        return Err(Error::InvalidParameter(
            "at least one cross-validation repetition is required".into(),
        ));
    }
    if features.n_rows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            features.n_rows(),
            labels.len()
        )));
    }
    let mut per_repetition = Vec::with_capacity(n_repetitions);
    for rep in 0..n_repetitions {
        let mut rng = seed::stream(seed::derive_seed(seed, stage::VALIDATE, rep as u64));
        let folds = stratified_folds(labels, n_folds, &mut rng)?;
        let mut pooled = vec![0.0; labels.len()];
        for fold in &folds {
            let held: std::collections::HashSet<usize> = fold.iter().copied().collect();
            let train_idx: Vec<usize> =
                (0..labels.len()).filter(|i| !held.contains(i)).collect();
            let mut data = Vec::with_capacity(train_idx.len() * features.n_cols());
            let mut train_labels = Vec::with_capacity(train_idx.len());
            for &i in &train_idx {
                data.extend_from_slice(features.row(i));
                train_labels.push(labels[i]);
            }
            let train_features =
                DenseMatrix::from_vec(train_idx.len(), features.n_cols(), data)?;
            let model = train_logistic(
                &train_features,
                &train_labels,
                &train.with_seed(rng.random::<u64>()),
            )?;
            for &i in fold {
                pooled[i] = model.predict(features.row(i));
            }
        }
        per_repetition.push(classification_metrics(labels, &pooled)?);
    }
    let mean = ClassificationMetrics::mean_of(&per_repetition);
    let ci_half_width = ClassificationMetrics::ci_half_width_of(&per_repetition);
    Ok(RepeatedCvResult {
        per_repetition,
        mean,
        ci_half_width,
    })
}
