//! Validation suite: score summaries, cohort-overlap curves, and the
//! label-quality probe.
//!
//! The label-quality probe checks that the risk scores carry signal
//! without any ground-truth labels for the undiagnosed side. It trains a
//! classifier to separate diagnosed patients from undiagnosed "controls"
//! drawn only from below a normalized-score ceiling. If the scores are
//! informative, stricter ceilings yield cleaner controls and the probe
//! separates the classes more easily, so accuracy and AUC should fall as
//! the ceiling rises toward accepting everyone.

mod classifier;
mod metrics;

pub use classifier::{
    cross_validate, presence_features, stack_rows, stratified_folds, train_logistic,
    LogisticModel, RepeatedCvResult, TrainOptions,
};
pub use metrics::{
    auc_mann_whitney, classification_metrics, confusion_counts, jaccard, top_k_covariates,
    ClassificationMetrics, SimilarityCurve,
};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::cohort::CohortMatrix;
use crate::error::{Error, Result};
use crate::seed::{self, stage};

/// Location statistics of a score sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSummary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl ScoreSummary {
    pub fn from_scores(scores: &[f64]) -> Result<ScoreSummary> {
        if scores.is_empty() {
            return Err(Error::EmptyInput("score sample"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("score sample"));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Ok(ScoreSummary {
            mean: sorted.iter().sum::<f64>() / n as f64,
            median,
            max: sorted[n - 1],
        })
    }
}

/// Settings for the label-quality probe.
#[derive(Debug, Clone)]
pub struct LabelQualityParams {
    pub thresholds: Vec<f64>,
    pub n_folds: usize,
    pub n_repetitions: usize,
    pub seed: u64,
    pub train: TrainOptions,
}

impl LabelQualityParams {
    pub fn new(seed: u64) -> LabelQualityParams {
        LabelQualityParams {
            thresholds: vec![0.1, 0.5, 1.0],
            n_folds: 5,
            n_repetitions: 10,
            seed,
            train: TrainOptions::new(seed),
        }
    }

    pub fn with_thresholds(mut self, thresholds: Vec<f64>) -> LabelQualityParams {
        self.thresholds = thresholds;
        self
    }

    pub fn with_folds(mut self, n_folds: usize) -> LabelQualityParams {
        self.n_folds = n_folds;
        self
    }

    pub fn with_repetitions(mut self, n_repetitions: usize) -> LabelQualityParams {
        self.n_repetitions = n_repetitions;
        self
    }

    pub fn with_train(mut self, train: TrainOptions) -> LabelQualityParams {
        self.train = train;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::EmptyInput("score ceilings"));
        }
        for &t in &self.thresholds {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!(
                    "score ceiling {t} must lie in [0, 1]"
                )));
            }
        }
        if !self.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter(
                "score ceilings must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Probe outcome for one score ceiling.
#[derive(Debug, Clone)]
pub struct ThresholdOutcome {
    pub threshold: f64,
    pub n_positives: usize,
    pub n_negatives: usize,
    pub cv: RepeatedCvResult,
}

/// Full label-quality report across ceilings.
#[derive(Debug, Clone)]
pub struct LabelQualityReport {
    outcomes: Vec<ThresholdOutcome>,
    seed: u64,
}

impl LabelQualityReport {
    pub fn outcomes(&self) -> &[ThresholdOutcome] {
        &self.outcomes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Runs the label-quality probe: for each score ceiling, draws a
/// positives-sized balanced sample of undiagnosed patients whose
/// normalized score is at or below the ceiling, then cross-validates a
/// logistic probe on presence-coded selected covariates.
pub fn label_quality_experiment(
    diagnosed: &CohortMatrix,
    undiagnosed: &CohortMatrix,
    undiagnosed_scores: &[f64],
    features: &[usize],
    params: &LabelQualityParams,
) -> Result<LabelQualityReport> {
    params.validate()?;
    if diagnosed.n_covariates() != undiagnosed.n_covariates() {
        return Err(Error::DimensionMismatch(format!(
            "diagnosed universe has {} covariates, undiagnosed {}",
            diagnosed.n_covariates(),
            undiagnosed.n_covariates()
        )));
    }
    if undiagnosed_scores.len() != undiagnosed.n_patients() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} undiagnosed patients",
            undiagnosed_scores.len(),
            undiagnosed.n_patients()
        )));
    }
    if undiagnosed_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("undiagnosed scores"));
    }
    let n_positives = diagnosed.n_patients();
    if n_positives == 0 {
        return Err(Error::EmptyInput("diagnosed cohort"));
    }
    let positive_features = presence_features(diagnosed, features)?;
    let mut outcomes = Vec::with_capacity(params.thresholds.len());
    for (t_idx, &threshold) in params.thresholds.iter().enumerate() {
        let mut eligible: Vec<usize> = (0..undiagnosed.n_patients())
            .filter(|&i| undiagnosed_scores[i] <= threshold)
            .collect();
        if eligible.len() < n_positives {
            return Err(Error::InsufficientNegatives {
                threshold,
                needed: n_positives,
                available: eligible.len(),
            });
        }
        let mut rng = seed::stream(seed::derive_seed(
            params.seed,
            stage::VALIDATE,
            2 * t_idx as u64,
        ));
        eligible.shuffle(&mut rng);
        let mut sample = eligible[..n_positives].to_vec();
        sample.sort_unstable();
        let negatives = undiagnosed.select_rows(&sample)?;
        let negative_features = presence_features(&negatives, features)?;
        let stacked = stack_rows(&positive_features, &negative_features)?;
        let mut labels = vec![true; n_positives];
        labels.extend(std::iter::repeat(false).take(n_positives));
        let cv_seed = seed::derive_seed(params.seed, stage::VALIDATE, 2 * t_idx as u64 + 1);
        let cv = cross_validate(
            &stacked,
            &labels,
            params.n_folds,
            params.n_repetitions,
            &params.train.with_seed(rng.random::<u64>()),
            cv_seed,
        )?;
        outcomes.push(ThresholdOutcome {
            threshold,
            n_positives,
            n_negatives: n_positives,
            cv,
        });
    }
    Ok(LabelQualityReport {
        outcomes,
        seed: params.seed,
    })
}

/// Writes `group<TAB>mean<TAB>median<TAB>max` rows.
pub fn write_summary_file(
    path: impl AsRef<Path>,
    groups: &[(&str, ScoreSummary)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (name, s) in groups {
        writeln!(w, "{name}\t{}\t{}\t{}", s.mean, s.median, s.max)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `k<TAB>jaccard<TAB>pair_label` rows, one per pair and grid
/// point, ready for plotting.
pub fn write_similarity_file(path: impl AsRef<Path>, curve: &SimilarityCurve) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (label, values) in curve.rows() {
        for (&k, v) in curve.ks().iter().zip(values) {
            writeln!(w, "{k}\t{v}\t{label}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes one row per ceiling:
/// `threshold<TAB>n_per_class` then `mean<TAB>ci` for each metric field.
pub fn write_label_quality_file(
    path: impl AsRef<Path>,
    report: &LabelQualityReport,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "threshold\tn_per_class")?;
    for name in ClassificationMetrics::FIELD_NAMES {
        write!(w, "\t{name}_mean\t{name}_ci")?;
    }
    writeln!(w)?;
    for o in report.outcomes() {
        write!(w, "{}\t{}", o.threshold, o.n_positives)?;
        for (mean, ci) in o.cv.mean.fields().iter().zip(o.cv.ci_half_width.fields()) {
            write!(w, "\t{mean}\t{ci}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{ingest_events, EventRecord, Label};

    fn cohort(prefix: &str, label: Label, rows: &[&[(&str, i64)]]) -> CohortMatrix {
        let labels: Vec<(String, Label)> = (0..rows.len())
            .map(|i| (format!("{prefix}{i}"), label))
            .collect();
        let events = rows.iter().enumerate().flat_map(|(i, evs)| {
            evs.iter().map(move |(c, n)| EventRecord {
                patient_id: format!("{prefix}{i}"),
                covariate_code: c.to_string(),
                count: *n,
            })
        });
        ingest_events(events, &labels).unwrap()
    }

    #[test]
    fn score_summary_hand_cases() {
        let s = ScoreSummary::from_scores(&[0.4, 0.1, 0.3]).unwrap();
        assert!((s.mean - 0.26666666666666666).abs() < 1e-15);
        assert_eq!(s.median, 0.3);
        assert_eq!(s.max, 0.4);
        let even = ScoreSummary::from_scores(&[0.1, 0.2, 0.3, 0.8]).unwrap();
        assert_eq!(even.median, 0.25);
        assert!(ScoreSummary::from_scores(&[]).is_err());
        assert!(ScoreSummary::from_scores(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(LabelQualityParams::new(1).validate().is_ok());
        assert!(LabelQualityParams::new(1)
            .with_thresholds(vec![])
            .validate()
            .is_err());
        assert!(LabelQualityParams::new(1)
            .with_thresholds(vec![0.5, 0.5])
            .validate()
            .is_err());
        assert!(LabelQualityParams::new(1)
            .with_thresholds(vec![0.1, 1.5])
            .validate()
            .is_err());
    }

    /// Diagnosed patients carry a marker covariate; a third of the
    /// undiagnosed do too (look-alikes) and score high. Drawing controls
    /// only below a low score ceiling excludes the look-alikes, so the
    /// probe should separate classes more cleanly at 0.1 than at 1.0.
    #[test]
    fn probe_degrades_as_ceiling_admits_lookalikes() {
        let n = 60;
        let marker: &[(&str, i64)] = &[("marker", 1), ("noise", 1)];
        let plain: &[(&str, i64)] = &[("noise", 1)];
        let diagnosed_rows: Vec<&[(&str, i64)]> = (0..n).map(|_| marker).collect();
        let mut undiagnosed_rows: Vec<&[(&str, i64)]> = Vec::new();
        let mut scores = Vec::new();
        for i in 0..3 * n {
            if i % 3 == 0 {
                undiagnosed_rows.push(marker);
                scores.push(0.8);
            } else {
                undiagnosed_rows.push(plain);
                scores.push(0.05);
            }
        }
        // Shared dictionary order: mention marker first in both cohorts.
        let diagnosed = cohort("d", Label::Diagnosed, &diagnosed_rows);
        let undiagnosed = cohort("u", Label::Undiagnosed, &undiagnosed_rows);
        assert_eq!(diagnosed.covariate_index("marker"), Some(0));
        assert_eq!(undiagnosed.covariate_index("marker"), Some(0));
        let params = LabelQualityParams::new(99)
            .with_thresholds(vec![0.1, 1.0])
            .with_repetitions(3)
            .with_train(TrainOptions::new(0).with_epochs(80));
        let report =
            label_quality_experiment(&diagnosed, &undiagnosed, &scores, &[0, 1], &params)
                .unwrap();
        let clean = &report.outcomes()[0];
        let dirty = &report.outcomes()[1];
        assert_eq!(clean.n_negatives, n);
        assert!(clean.cv.mean.accuracy > 0.95, "clean accuracy {}", clean.cv.mean.accuracy);
        assert!(
            clean.cv.mean.accuracy > dirty.cv.mean.accuracy + 0.05,
            "accuracy {} vs {}",
            clean.cv.mean.accuracy,
            dirty.cv.mean.accuracy
        );
        assert!(
            clean.cv.mean.auc > dirty.cv.mean.auc + 0.05,
            "auc {} vs {}",
            clean.cv.mean.auc,
            dirty.cv.mean.auc
        );
    }

    #[test]
    fn probe_is_deterministic() {
        let marker: &[(&str, i64)] = &[("m", 1), ("o", 1)];
        // A zero-count mention registers "m" in the dictionary so both
        // cohorts share the same covariate universe.
        let plain: &[(&str, i64)] = &[("m", 0), ("o", 2)];
        let diagnosed =
            cohort("d", Label::Diagnosed, &(0..12).map(|_| marker).collect::<Vec<_>>());
        let undiagnosed =
            cohort("u", Label::Undiagnosed, &(0..30).map(|_| plain).collect::<Vec<_>>());
        let scores = vec![0.02; 30];
        let params = LabelQualityParams::new(7)
            .with_thresholds(vec![0.5])
            .with_repetitions(2)
            .with_folds(3)
            .with_train(TrainOptions::new(0).with_epochs(30));
        let a = label_quality_experiment(&diagnosed, &undiagnosed, &scores, &[0, 1], &params)
            .unwrap();
        let b = label_quality_experiment(&diagnosed, &undiagnosed, &scores, &[0, 1], &params)
            .unwrap();
        assert_eq!(
            a.outcomes()[0].cv.per_repetition,
            b.outcomes()[0].cv.per_repetition
        );
    }

    #[test]
    fn probe_reports_thin_control_pools() {
        let marker: &[(&str, i64)] = &[("m", 1)];
        let diagnosed =
            cohort("d", Label::Diagnosed, &(0..10).map(|_| marker).collect::<Vec<_>>());
        let undiagnosed =
            cohort("u", Label::Undiagnosed, &(0..10).map(|_| marker).collect::<Vec<_>>());
        let scores = vec![0.9; 10];
        let params = LabelQualityParams::new(7).with_thresholds(vec![0.1]);
        match label_quality_experiment(&diagnosed, &undiagnosed, &scores, &[0], &params) {
            Err(Error::InsufficientNegatives { threshold, needed, available }) => {
                assert_eq!(threshold, 0.1);
                assert_eq!(needed, 10);
                assert_eq!(available, 0);
            }
            other => panic!("expected InsufficientNegatives, got {other:?}"),
        }
    }

    #[test]
    fn report_files_have_expected_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let s = ScoreSummary { mean: 0.5, median: 0.4, max: 0.9 };
        let path = dir.path().join("summary.tsv");
        write_summary_file(&path, &[("diagnosed", s), ("undiagnosed", s)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("diagnosed\t0.5\t0.4\t0.9"));

        let mut curve = SimilarityCurve::new(vec![10, 25]).unwrap();
        curve.add_values("high-vs-diagnosed", vec![0.8, 0.7]).unwrap();
        let path = dir.path().join("similarity.tsv");
        write_similarity_file(&path, &curve).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("10\t0.8\thigh-vs-diagnosed"));
    }
}
