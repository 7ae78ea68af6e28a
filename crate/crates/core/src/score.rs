//! Patient-level risk scores, normalization, and percentile categories.
//!
//! A patient's raw score is the sum of `weight * divergence` over the
//! selected covariates present in their record (any positive count; the
//! magnitude does not matter). Raw scores are squashed into [0, 1) with a
//! scaled arctangent and placed on a reference distribution by mid-rank
//! percentile, which then maps to a Low / Moderate / High category.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::cohort::CohortMatrix;
use crate::divergence::DivergenceTable;
use crate::error::{io_context, Error, Result};
use crate::rwc::FeatureWeights;

/// Percentile cut points: below the first is Low, above the second is High.
pub const DEFAULT_PERCENTILE_BOUNDS: (f64, f64) = (50.0, 90.0);

/// Squashes a non-negative raw score into [0, 1) via (2/pi) * atan.
pub fn normalize_score(raw: f64) -> f64 {
    std::f64::consts::FRAC_2_PI * raw.atan()
}

/// Risk tier assigned from a percentile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RiskCategory {
    Low,
    Moderate,
    High,
}

impl RiskCategory {
    /// Applies the default cut points: Low below 50, High above 90,
    /// Moderate between (both bounds inclusive).
    pub fn from_percentile(percentile: f64) -> RiskCategory {
        Self::from_percentile_with(percentile, DEFAULT_PERCENTILE_BOUNDS)
            .expect("default bounds are valid")
    }

    /// Applies custom cut points `(lower, upper)` with the same
    /// inclusive-middle convention.
    pub fn from_percentile_with(percentile: f64, bounds: (f64, f64)) -> Result<RiskCategory> {
        let (lower, upper) = bounds;
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(Error::InvalidParameter(format!(
                "percentile bounds must be finite with lower < upper, got ({lower}, {upper})"
            )));
        }
        if !(0.0..=100.0).contains(&lower) || !(0.0..=100.0).contains(&upper) {
            return Err(Error::InvalidParameter(format!(
                "percentile bounds must lie in [0, 100], got ({lower}, {upper})"
            )));
        }
        Ok(if percentile < lower {
            RiskCategory::Low
        } else if percentile <= upper {
            RiskCategory::Moderate
        } else {
            RiskCategory::High
        })
    }
}

impl fmt::Display for RiskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskCategory::Low => "Low",
            RiskCategory::Moderate => "Moderate",
            RiskCategory::High => "High",
        })
    }
}

impl FromStr for RiskCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<RiskCategory> {
        match s {
            "Low" => Ok(RiskCategory::Low),
            "Moderate" => Ok(RiskCategory::Moderate),
            "High" => Ok(RiskCategory::High),
            other => Err(Error::InvalidParameter(format!(
                "unknown risk category {other:?}"
            ))),
        }
    }
}

/// One patient's scored record.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskProfile {
    pub patient_id: String,
    pub raw: f64,
    pub normalized: f64,
    pub percentile: f64,
    pub category: RiskCategory,
}

/// Sorted normalized scores used as the percentile reference.
#[derive(Debug, Clone)]
pub struct ReferenceDistribution {
    values: Vec<f64>,
}

impl ReferenceDistribution {
    pub fn from_scores(mut values: Vec<f64>) -> Result<ReferenceDistribution> {
        if values.is_empty() {
            return Err(Error::EmptyInput("reference scores"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reference scores"));
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
        Ok(ReferenceDistribution { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mid-rank percentile of `value` on this reference:
    /// `100 * (below + 0.5 * equal) / len`.
    pub fn percentile_rank(&self, value: f64) -> f64 {
        let below = self.values.partition_point(|&v| v < value);
        let through = self.values.partition_point(|&v| v <= value);
        let equal = through - below;
        100.0 * (below as f64 + 0.5 * equal as f64) / self.values.len() as f64
    }
}

/// Scores cohorts by combining covariate weights with divergence weights.
#[derive(Debug, Clone)]
pub struct ScoreEngine {
    contributions: Vec<f64>,
    n_selected: usize,
}

impl ScoreEngine {
    /// Builds the per-covariate contribution vector `weight * divergence`.
    /// The divergence table must cover exactly the selected covariates, in
    /// selection order.
    pub fn new(weights: &FeatureWeights, table: &DivergenceTable) -> Result<ScoreEngine> {
        ScoreEngine::from_raw_weights(weights.weights(), table)
    }

    /// Like [`ScoreEngine::new`] but starting from a plain per-column weight
    /// vector; the selected set is re-derived from the weights.
    pub fn from_raw_weights(weights: &[f64], table: &DivergenceTable) -> Result<ScoreEngine> {
        let (selected, _) = crate::rwc::select_from_weights(weights)?;
        if table.covariates() != selected {
            return Err(Error::MisalignedFeatures(format!(
                "table covers columns {:?} but the selection is {selected:?}",
                table.covariates()
            )));
        }
        let mut contributions = vec![0.0; weights.len()];
        for (idx, &j) in selected.iter().enumerate() {
            contributions[j] = weights[j] * table.kl()[idx];
        }
        Ok(ScoreEngine {
            contributions,
            n_selected: selected.len(),
        })
    }

    /// Per-covariate contribution of a present covariate to the raw score.
    pub fn contributions(&self) -> &[f64] {
        &self.contributions
    }

    pub fn n_selected(&self) -> usize {
        self.n_selected
    }

    /// Raw score for one patient row: contributions summed over present
    /// covariates, in column order.
    pub fn raw_score(&self, matrix: &CohortMatrix, row: usize) -> f64 {
        let (cols, _) = matrix.row(row);
        cols.iter().map(|&j| self.contributions[j]).sum()
    }

    fn check_universe(&self, matrix: &CohortMatrix) -> Result<()> {
        if matrix.n_covariates() != self.contributions.len() {
            return Err(Error::DimensionMismatch(format!(
                "engine covers {} covariates but the cohort has {}",
                self.contributions.len(),
                matrix.n_covariates()
            )));
        }
        Ok(())
    }

    /// Scores every patient against an external reference distribution.
    pub fn score_cohort(
        &self,
        matrix: &CohortMatrix,
        reference: &ReferenceDistribution,
        bounds: (f64, f64),
    ) -> Result<Vec<RiskProfile>> {
        self.check_universe(matrix)?;
        (0..matrix.n_patients())
            .map(|i| {
                let raw = self.raw_score(matrix, i);
                let normalized = normalize_score(raw);
                let percentile = reference.percentile_rank(normalized);
                Ok(RiskProfile {
                    patient_id: matrix.patient_id(i).to_string(),
                    raw,
                    normalized,
                    percentile,
                    category: RiskCategory::from_percentile_with(percentile, bounds)?,
                })
            })
            .collect()
    }

    /// Scores a cohort against its own score distribution, returning the
    /// profiles together with the reference built from them.
    pub fn score_cohort_self(
        &self,
        matrix: &CohortMatrix,
        bounds: (f64, f64),
    ) -> Result<(Vec<RiskProfile>, ReferenceDistribution)> {
        self.check_universe(matrix)?;
        let normalized: Vec<f64> = (0..matrix.n_patients())
            .map(|i| normalize_score(self.raw_score(matrix, i)))
            .collect();
        let reference = ReferenceDistribution::from_scores(normalized)?;
        let profiles = self.score_cohort(matrix, &reference, bounds)?;
        Ok((profiles, reference))
    }
}

/// Writes `patient_id<TAB>raw<TAB>normalized<TAB>percentile<TAB>category`
/// rows.
pub fn write_profiles_file(path: impl AsRef<Path>, profiles: &[RiskProfile]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in profiles {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            p.patient_id, p.raw, p.normalized, p.percentile, p.category
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profiles_file(path: impl AsRef<Path>) -> Result<Vec<RiskProfile>> {
    let path = path.as_ref();
    let mut profiles = Vec::new();
    for (idx, line) in BufReader::new(File::open(path).map_err(|e| io_context(path, e))?).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = if fields.len() == 5 && !fields[0].is_empty() {
            match (
                fields[1].parse::<f64>(),
                fields[2].parse::<f64>(),
                fields[3].parse::<f64>(),
                fields[4].parse::<RiskCategory>(),
            ) {
                (Ok(raw), Ok(normalized), Ok(percentile), Ok(category)) => Some(RiskProfile {
                    patient_id: fields[0].to_string(),
                    raw,
                    normalized,
                    percentile,
                    category,
                }),
                _ => None,
            }
        } else {
            None
        };
        match parsed {
            Some(p) => profiles.push(p),
            None => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: "expected patient_id<TAB>raw<TAB>normalized<TAB>percentile<TAB>category"
                        .into(),
                })
            }
        }
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{ingest_events, EventRecord, Label};
    use crate::divergence::DivergenceTable;
    use crate::rwc::FeatureWeights;
    use proptest::prelude::*;

    fn cohort(rows: &[(&str, &[(&str, i64)])]) -> CohortMatrix {
        let labels: Vec<(String, Label)> = rows
            .iter()
            .map(|(p, _)| (p.to_string(), Label::Diagnosed))
            .collect();
        let events = rows.iter().flat_map(|(p, evs)| {
            evs.iter().map(move |(c, n)| EventRecord {
                patient_id: p.to_string(),
                covariate_code: c.to_string(),
                count: *n,
            })
        });
        ingest_events(events, &labels).unwrap()
    }

    fn engine(weights: Vec<f64>, kl: Vec<f64>) -> ScoreEngine {
        let fw = FeatureWeights::from_weights(weights, 1, vec![7]).unwrap();
        let selected = fw.selected().to_vec();
        let aligned_kl: Vec<f64> = selected.iter().map(|&j| kl[j]).collect();
        let table = DivergenceTable::from_parts(
            selected.clone(),
            vec![0.5; selected.len()],
            vec![0.1; selected.len()],
            aligned_kl,
            1e-8,
        )
        .unwrap();
        ScoreEngine::new(&fw, &table).unwrap()
    }

    #[test]
    fn normalization_pinned_values() {
        assert_eq!(normalize_score(0.0), 0.0);
        assert!((normalize_score(1.0) - 0.5).abs() < 1e-15);
        let big = normalize_score(1000.0);
        assert!((big - 0.999363380439839).abs() < 1e-12, "got {big}");
        assert!((big - 0.999363).abs() < 1e-6);
        assert!(normalize_score(f64::MAX) <= 1.0);
    }

    #[test]
    fn category_cut_points() {
        assert_eq!(RiskCategory::from_percentile(0.0), RiskCategory::Low);
        assert_eq!(RiskCategory::from_percentile(49.999), RiskCategory::Low);
        assert_eq!(RiskCategory::from_percentile(50.0), RiskCategory::Moderate);
        assert_eq!(RiskCategory::from_percentile(90.0), RiskCategory::Moderate);
        assert_eq!(RiskCategory::from_percentile(90.001), RiskCategory::High);
        assert_eq!(RiskCategory::from_percentile(100.0), RiskCategory::High);
    }

    #[test]
    fn category_custom_bounds_and_validation() {
        let c = RiskCategory::from_percentile_with(30.0, (25.0, 75.0)).unwrap();
        assert_eq!(c, RiskCategory::Moderate);
        assert!(RiskCategory::from_percentile_with(50.0, (90.0, 50.0)).is_err());
        assert!(RiskCategory::from_percentile_with(50.0, (-1.0, 50.0)).is_err());
        assert!(RiskCategory::from_percentile_with(50.0, (50.0, 101.0)).is_err());
    }

    #[test]
    fn category_text_round_trip() {
        for c in [RiskCategory::Low, RiskCategory::Moderate, RiskCategory::High] {
            assert_eq!(c.to_string().parse::<RiskCategory>().unwrap(), c);
        }
        assert!("low".parse::<RiskCategory>().is_err());
        assert!("".parse::<RiskCategory>().is_err());
    }

    #[test]
    fn percentile_mid_rank_hand_cases() {
        let r = ReferenceDistribution::from_scores(vec![0.4, 0.2, 0.1, 0.3]).unwrap();
        assert_eq!(r.values(), &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(r.percentile_rank(0.25), 50.0);
        assert_eq!(r.percentile_rank(0.05), 0.0);
        assert_eq!(r.percentile_rank(0.5), 100.0);
        assert_eq!(r.percentile_rank(0.1), 12.5);
        let single = ReferenceDistribution::from_scores(vec![0.7]).unwrap();
        assert_eq!(single.percentile_rank(0.7), 50.0);
    }

    #[test]
    fn percentile_with_heavy_ties() {
        let r = ReferenceDistribution::from_scores(vec![0.5; 10]).unwrap();
        assert_eq!(r.percentile_rank(0.5), 50.0);
        assert_eq!(r.percentile_rank(0.4), 0.0);
        assert_eq!(r.percentile_rank(0.6), 100.0);
    }

    #[test]
    fn reference_rejects_empty_and_non_finite() {
        assert!(ReferenceDistribution::from_scores(vec![]).is_err());
        assert!(ReferenceDistribution::from_scores(vec![0.1, f64::NAN]).is_err());
    }

    #[test]
    fn raw_score_sums_present_selected_contributions() {
        // Columns in first-mention order: x=0, y=1, z=2.
        let m = cohort(&[
            ("a", &[("x", 9), ("y", 1), ("z", 1)]),
            ("b", &[("x", 1)]),
            ("c", &[("z", 5)]),
            ("d", &[]),
        ]);
        // Weights select x and y (mean of positives ~1.83), z excluded.
        let e = engine(vec![3.0, 2.0, 0.5], vec![0.5, 0.25, 9.0]);
        assert_eq!(e.n_selected(), 2);
        assert_eq!(e.contributions(), &[1.5, 0.5, 0.0]);
        // Count magnitudes are irrelevant; only presence matters.
        assert_eq!(e.raw_score(&m, 0), 2.0);
        assert_eq!(e.raw_score(&m, 1), 1.5);
        assert_eq!(e.raw_score(&m, 2), 0.0);
        assert_eq!(e.raw_score(&m, 3), 0.0);
    }

    #[test]
    fn engine_rejects_misaligned_table() {
        let fw = FeatureWeights::from_weights(vec![3.0, 2.0, 0.5], 1, vec![7]).unwrap();
        assert_eq!(fw.selected(), &[0, 1]);
        // Wrong order.
        let t = DivergenceTable::from_parts(vec![1, 0], vec![0.5; 2], vec![0.1; 2], vec![0.4; 2], 1e-8)
            .unwrap();
        assert!(matches!(
            ScoreEngine::new(&fw, &t),
            Err(Error::MisalignedFeatures(_))
        ));
        // Wrong set.
        let t = DivergenceTable::from_parts(vec![0, 2], vec![0.5; 2], vec![0.1; 2], vec![0.4; 2], 1e-8)
            .unwrap();
        assert!(ScoreEngine::new(&fw, &t).is_err());
    }

    #[test]
    fn score_cohort_self_uses_own_distribution() {
        let m = cohort(&[
            ("a", &[("x", 1), ("y", 1)]),
            ("b", &[("x", 1)]),
            ("c", &[("y", 2)]),
            ("d", &[]),
        ]);
        // Equal weights keep both columns selected by the inclusive mean
        // threshold.
        let e = engine(vec![2.0, 2.0], vec![0.5, 0.25]);
        let (profiles, reference) = e
            .score_cohort_self(&m, DEFAULT_PERCENTILE_BOUNDS)
            .unwrap();
        assert_eq!(profiles.len(), 4);
        assert_eq!(reference.len(), 4);
        // Distinct scores: 1.5, 1.0, 0.5, 0.0 -> mid-rank percentiles
        // 87.5, 62.5, 37.5, 12.5.
        assert_eq!(profiles[0].percentile, 87.5);
        assert_eq!(profiles[1].percentile, 62.5);
        assert_eq!(profiles[2].percentile, 37.5);
        assert_eq!(profiles[3].percentile, 12.5);
        assert_eq!(profiles[0].category, RiskCategory::Moderate);
        assert_eq!(profiles[3].category, RiskCategory::Low);
        assert_eq!(profiles[3].raw, 0.0);
        assert_eq!(profiles[3].normalized, 0.0);
        // Reference holds the sorted normalized scores.
        let mut expect: Vec<f64> = profiles.iter().map(|p| p.normalized).collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(reference.values(), expect.as_slice());
    }

    #[test]
    fn score_cohort_against_external_reference() {
        let m = cohort(&[("v", &[("x", 1)])]);
        let e = engine(vec![1.0], vec![1.0]);
        let reference =
            ReferenceDistribution::from_scores(vec![0.1, 0.2, 0.3, 0.9]).unwrap();
        let profiles = e.score_cohort(&m, &reference, (50.0, 90.0)).unwrap();
        // normalize(1.0) = 0.5 sits above three of four reference scores.
        assert_eq!(profiles[0].percentile, 75.0);
        assert_eq!(profiles[0].category, RiskCategory::Moderate);
    }

    #[test]
    fn score_cohort_checks_universe() {
        let m = cohort(&[("a", &[("x", 1), ("y", 1)])]);
        let e = engine(vec![1.0], vec![1.0]);
        let reference = ReferenceDistribution::from_scores(vec![0.5]).unwrap();
        assert!(matches!(
            e.score_cohort(&m, &reference, DEFAULT_PERCENTILE_BOUNDS),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn profiles_file_round_trip() {
        let profiles = vec![
            RiskProfile {
                patient_id: "p-1".into(),
                raw: 1.75,
                normalized: normalize_score(1.75),
                percentile: 87.5,
                category: RiskCategory::Moderate,
            },
            RiskProfile {
                patient_id: "p-2".into(),
                raw: 0.0,
                normalized: 0.0,
                percentile: 12.5,
                category: RiskCategory::Low,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.tsv");
        write_profiles_file(&path, &profiles).unwrap();
        let back = read_profiles_file(&path).unwrap();
        assert_eq!(back, profiles);
    }

    #[test]
    fn profiles_file_reports_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.tsv");
        std::fs::write(&path, "p-1\t0.5\t0.3\t40\tLow\np-2\t0.5\tbad\t40\tLow\n").unwrap();
        match read_profiles_file(&path) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn normalization_bounded_and_monotone(
            a in 0.0f64..1e6,
            delta in 1e-6f64..10.0,
        ) {
            let lo = normalize_score(a);
            let hi = normalize_score(a + delta);
            prop_assert!((0.0..1.0).contains(&lo));
            prop_assert!(hi > lo);
        }

        #[test]
        fn percentile_always_within_range(
            mut scores in proptest::collection::vec(0.0f64..1.0, 1..50),
            probe in 0.0f64..1.0,
        ) {
            let r = ReferenceDistribution::from_scores(std::mem::take(&mut scores)).unwrap();
            let p = r.percentile_rank(probe);
            prop_assert!((0.0..=100.0).contains(&p));
        }
    }
}
