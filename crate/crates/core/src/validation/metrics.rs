//! Set-overlap and classification metrics used by the validation suite.

use crate::cohort::CohortMatrix;
use crate::error::{Error, Result};

/// Jaccard similarity of two index sets.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: std::collections::HashSet<usize> = a.iter().copied().collect();
    let b: std::collections::HashSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// The `k` most prevalent covariate columns, ordered by presence count
/// descending with ties broken by ascending column index.
pub fn top_k_covariates(matrix: &CohortMatrix, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > matrix.n_covariates() {
        return Err(Error::InvalidParameter(format!(
            "top-k size {k} must be in 1..={}",
            matrix.n_covariates()
        )));
    }
    let counts = matrix.column_presence_counts();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Jaccard similarities of labelled cohort pairs across a shared grid of
/// top-k sizes.
#[derive(Debug, Clone)]
pub struct SimilarityCurve {
    ks: Vec<usize>,
    rows: Vec<(String, Vec<f64>)>,
}

impl SimilarityCurve {
    pub fn new(ks: Vec<usize>) -> Result<SimilarityCurve> {
        if ks.is_empty() {
            return Err(Error::EmptyInput("top-k grid"));
        }
        if !ks.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter(
                "top-k grid must be strictly increasing".into(),
            ));
        }
        Ok(SimilarityCurve { ks, rows: Vec::new() })
    }

    /// Records the top-k overlap between two cohorts under `label`.
    pub fn add_pair(
        &mut self,
        label: impl Into<String>,
        a: &CohortMatrix,
        b: &CohortMatrix,
    ) -> Result<()> {
        let values = self
            .ks
            .iter()
            .map(|&k| Ok(jaccard(&top_k_covariates(a, k)?, &top_k_covariates(b, k)?)))
            .collect::<Result<Vec<f64>>>()?;
        self.rows.push((label.into(), values));
        Ok(())
    }

    /// Records precomputed similarity values aligned to the grid.
    pub fn add_values(&mut self, label: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.ks.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} similarity values, got {}",
                self.ks.len(),
                values.len()
            )));
        }
        self.rows.push((label.into(), values));
        Ok(())
    }

    pub fn ks(&self) -> &[usize] {
        &self.ks
    }

    pub fn rows(&self) -> &[(String, Vec<f64>)] {
        &self.rows
    }

    pub fn values_for(&self, label: &str) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| v.as_slice())
    }
}

/// Classification quality over pooled predictions; confusion-based fields
/// binarize probabilities at 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub brier: f64,
    pub auc: f64,
}

impl ClassificationMetrics {
    pub const FIELD_NAMES: [&'static str; 7] =
        ["accuracy", "precision", "recall", "f1", "mcc", "brier", "auc"];

    pub fn fields(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.mcc,
            self.brier,
            self.auc,
        ]
    }

    fn from_fields(fields: [f64; 7]) -> ClassificationMetrics {
        ClassificationMetrics {
            accuracy: fields[0],
            precision: fields[1],
            recall: fields[2],
            f1: fields[3],
            mcc: fields[4],
            brier: fields[5],
            auc: fields[6],
        }
    }

    /// Per-field mean over repetitions.
    pub fn mean_of(samples: &[ClassificationMetrics]) -> ClassificationMetrics {
        let n = samples.len().max(1) as f64;
        let mut sums = [0.0; 7];
        for s in samples {
            for (acc, v) in sums.iter_mut().zip(s.fields()) {
                *acc += v;
            }
        }
        Self::from_fields(sums.map(|s| s / n))
    }

    /// Per-field half-width of a 95% normal confidence interval,
    /// `1.96 * sd / sqrt(n)` with the unbiased standard deviation; zero
    /// for fewer than two repetitions.
    pub fn ci_half_width_of(samples: &[ClassificationMetrics]) -> ClassificationMetrics {
        if samples.len() < 2 {
            return Self::from_fields([0.0; 7]);
        }
        let n = samples.len() as f64;
        let mean = Self::mean_of(samples).fields();
        let mut ssq = [0.0; 7];
        for s in samples {
            for ((acc, v), m) in ssq.iter_mut().zip(s.fields()).zip(mean) {
                *acc += (v - m) * (v - m);
            }
        }
        Self::from_fields(ssq.map(|s| 1.96 * (s / (n - 1.0)).sqrt() / n.sqrt()))
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Confusion counts (tp, fp, fn, tn) at a 0.5 probability cut.
pub fn confusion_counts(labels: &[bool], probabilities: &[f64]) -> (usize, usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fnn = 0;
    let mut tn = 0;
    for (&y, &p) in labels.iter().zip(probabilities) {
        match (y, p >= 0.5) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fnn += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fnn, tn)
}

/// Area under the ROC curve by the rank-sum formulation; ties contribute
/// half credit via mid-ranks. Requires both classes to be present.
pub fn auc_mann_whitney(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch(
            "labels and scores differ in length".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("classifier scores"));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::EmptyInput("both classes are required for AUC"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // Mid-ranks over tied runs, 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += mid_rank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Computes the full metric set from pooled labels and probabilities.
pub fn classification_metrics(labels: &[bool], probabilities: &[f64]) -> Result<ClassificationMetrics> {
    if labels.len() != probabilities.len() {
        return Err(Error::DimensionMismatch(
            "labels and probabilities differ in length".into(),
        ));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("pooled predictions"));
    }
    let (tp, fp, fnn, tn) = confusion_counts(labels, probabilities);
    let (tp, fp, fnn, tn) = (tp as f64, fp as f64, fnn as f64, tn as f64);
    let total = tp + fp + fnn + tn;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fnn);
    let mcc_den = ((tp + fp) * (tp + fnn) * (tn + fp) * (tn + fnn)).sqrt();
    let brier = labels
        .iter()
        .zip(probabilities)
        .map(|(&y, &p)| {
            let y = if y { 1.0 } else { 0.0 };
            (p - y) * (p - y)
        })
        .sum::<f64>()
        / total;
    Ok(ClassificationMetrics {
        accuracy: (tp + tn) / total,
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
        mcc: ratio(tp * tn - fp * fnn, mcc_den),
        brier,
        auc: auc_mann_whitney(labels, probabilities)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{ingest_events, EventRecord, Label};
    use proptest::prelude::*;

    fn cohort(rows: &[&[(&str, i64)]]) -> CohortMatrix {
        let labels: Vec<(String, Label)> = (0..rows.len())
            .map(|i| (format!("p{i}"), Label::Diagnosed))
            .collect();
        let events = rows.iter().enumerate().flat_map(|(i, evs)| {
            evs.iter().map(move |(c, n)| EventRecord {
                patient_id: format!("p{i}"),
                covariate_code: c.to_string(),
                count: *n,
            })
        });
        ingest_events(events, &labels).unwrap()
    }

    #[test]
    fn jaccard_hand_cases() {
        assert_eq!(jaccard(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard(&[], &[]), 0.0);
    }

    #[test]
    fn top_k_orders_by_count_then_index() {
        // Columns: a=0 (2 patients), b=1 (3), c=2 (2), d=3 (1).
        let m = cohort(&[
            &[("a", 1), ("b", 1), ("c", 4)],
            &[("b", 2), ("c", 1)],
            &[("a", 1), ("b", 1), ("d", 1)],
        ]);
        assert_eq!(top_k_covariates(&m, 4).unwrap(), vec![1, 0, 2, 3]);
        assert_eq!(top_k_covariates(&m, 2).unwrap(), vec![1, 0]);
        assert!(top_k_covariates(&m, 0).is_err());
        assert!(top_k_covariates(&m, 5).is_err());
    }

    #[test]
    fn similarity_curve_validates_and_records() {
        let mut curve = SimilarityCurve::new(vec![1, 2]).unwrap();
        let a = cohort(&[&[("x", 1), ("y", 1)], &[("x", 1)]]);
        let b = cohort(&[&[("x", 1)], &[("x", 1), ("y", 3)], &[("y", 1)]]);
        // Same dictionaries: x=0, y=1 in both. Top-1: {0} vs {0} -> 1.0;
        // top-2 identical sets -> 1.0.
        curve.add_pair("a-vs-b", &a, &b).unwrap();
        assert_eq!(curve.values_for("a-vs-b").unwrap(), &[1.0, 1.0]);
        curve.add_values("flat", vec![0.25, 0.5]).unwrap();
        assert!(curve.add_values("bad", vec![0.1]).is_err());
        assert!(SimilarityCurve::new(vec![]).is_err());
        assert!(SimilarityCurve::new(vec![5, 5]).is_err());
        assert!(curve.values_for("missing").is_none());
    }

    #[test]
    fn metrics_hand_case() {
        // 40 true positives, 10 false positives, 20 false negatives,
        // 30 true negatives.
        let mut labels = Vec::new();
        let mut probs = Vec::new();
        for _ in 0..40 {
            labels.push(true);
            probs.push(0.9);
        }
        for _ in 0..10 {
            labels.push(false);
            probs.push(0.9);
        }
        for _ in 0..20 {
            labels.push(true);
            probs.push(0.1);
        }
        for _ in 0..30 {
            labels.push(false);
            probs.push(0.1);
        }
        assert_eq!(confusion_counts(&labels, &probs), (40, 10, 20, 30));
        let m = classification_metrics(&labels, &probs).unwrap();
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert!((m.precision - 0.8).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 0.7272727272727273).abs() < 1e-12);
        assert!((m.mcc - 0.4082482904638631).abs() < 1e-12);
        // Brier: 50 at 0.9 with y=1 or 0.1 with y=0 contribute 0.01 each;
        // the 30 misclassified-side pairs contribute 0.81 each.
        let expect_brier = (70.0 * 0.01 + 30.0 * 0.81) / 100.0;
        assert!((m.brier - expect_brier).abs() < 1e-12);
    }

    #[test]
    fn mcc_zero_denominator_maps_to_zero() {
        let labels = [true, true, false];
        let probs = [0.9, 0.8, 0.7];
        let m = classification_metrics(&labels, &probs).unwrap();
        assert_eq!(m.mcc, 0.0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn auc_extremes_and_ties() {
        let labels = [true, true, false, false];
        assert_eq!(auc_mann_whitney(&labels, &[0.9, 0.8, 0.2, 0.1]).unwrap(), 1.0);
        assert_eq!(auc_mann_whitney(&labels, &[0.1, 0.2, 0.8, 0.9]).unwrap(), 0.0);
        assert_eq!(auc_mann_whitney(&labels, &[0.5, 0.5, 0.5, 0.5]).unwrap(), 0.5);
        assert!(auc_mann_whitney(&[true, true], &[0.1, 0.2]).is_err());
        assert!(auc_mann_whitney(&labels, &[0.1, f64::NAN, 0.3, 0.4]).is_err());
    }

    #[test]
    fn auc_matches_brute_force_pair_count() {
        let mut rng = crate::seed::stream(42);
        use rand::Rng;
        for _ in 0..20 {
            let n = 30;
            let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
            if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
                continue;
            }
            // Coarse grid forces plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 5.0).floor()).collect();
            let fast = auc_mann_whitney(&labels, &scores).unwrap();
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                if !labels[i] {
                    continue;
                }
                for j in 0..n {
                    if labels[j] {
                        continue;
                    }
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
            let brute = wins / pairs;
            assert!((fast - brute).abs() < 1e-12, "fast {fast} vs brute {brute}");
        }
    }

    #[test]
    fn aggregate_mean_and_ci() {
        let mk = |a: f64| ClassificationMetrics {
            accuracy: a,
            precision: a,
            recall: a,
            f1: a,
            mcc: a,
            brier: a,
            auc: a,
        };
        let samples = vec![mk(0.6), mk(0.8)];
        let mean = ClassificationMetrics::mean_of(&samples);
        assert!((mean.accuracy - 0.7).abs() < 1e-12);
        let ci = ClassificationMetrics::ci_half_width_of(&samples);
        // sd of {0.6, 0.8} with ddof=1 is 0.1414...; ci = 1.96*sd/sqrt(2).
        let expect = 1.96 * (0.02f64).sqrt() / (2.0f64).sqrt();
        assert!((ci.accuracy - expect).abs() < 1e-12);
        assert_eq!(ClassificationMetrics::ci_half_width_of(&samples[..1]).auc, 0.0);
    }

    proptest! {
        #[test]
        fn jaccard_bounded_and_symmetric(
            a in proptest::collection::vec(0usize..20, 0..15),
            b in proptest::collection::vec(0usize..20, 0..15),
        ) {
            let ab = jaccard(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, jaccard(&b, &a));
        }

        #[test]
        fn auc_flips_under_label_negation(
            scores in proptest::collection::vec(0.0f64..1.0, 8..30),
            cut in 2usize..6,
        ) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| i % cut == 0).collect();
            prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
            let auc = auc_mann_whitney(&labels, &scores).unwrap();
            let flipped: Vec<bool> = labels.iter().map(|&y| !y).collect();
            let auc_f = auc_mann_whitney(&flipped, &scores).unwrap();
            prop_assert!((auc + auc_f - 1.0).abs() < 1e-12);
        }
    }
}
