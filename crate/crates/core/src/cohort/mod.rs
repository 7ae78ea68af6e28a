//! Cohort storage: a compressed sparse row matrix of per-patient covariate
//! counts plus the label, patient-id, and covariate-code metadata that the
//! downstream stages key on.

pub mod io;

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};

use indexmap::IndexSet;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Diagnosis status of one patient row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Diagnosed,
    Undiagnosed,
}

impl Label {
    pub fn as_flag(self) -> u8 {
        match self {
            Label::Diagnosed => 1,
            Label::Undiagnosed => 0,
        }
    }

    pub fn from_flag(flag: &str) -> Option<Label> {
        match flag {
            "1" => Some(Label::Diagnosed),
            "0" => Some(Label::Undiagnosed),
            _ => None,
        }
    }
}

/// One raw input event: a covariate observed `count` times for a patient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub patient_id: String,
    pub covariate_code: String,
    pub count: i64,
}

/// Patient-by-covariate count matrix in CSR form.
///
/// Stored values are strictly positive; zero cells are implicit. Column
/// indices are strictly increasing within each row. Rows follow the order
/// of the label list given at ingest, and every labeled patient keeps a row
/// even when it is empty — undiagnosed patients with no recorded covariates
/// must still be scorable (their score is zero).
#[derive(Debug, Clone)]
pub struct CohortMatrix {
    row_offsets: Vec<usize>,
    column_indices: Vec<usize>,
    values: Vec<u32>,
    covariates: IndexSet<String>,
    patient_ids: Vec<String>,
    labels: Vec<Label>,
}

impl CohortMatrix {
    /// Builds a matrix from raw CSR parts, validating every structural
    /// invariant. The covariate list is taken in column order.
    pub fn from_csr_parts(
        row_offsets: Vec<usize>,
        column_indices: Vec<usize>,
        values: Vec<u32>,
        covariates: Vec<String>,
        patient_ids: Vec<String>,
        labels: Vec<Label>,
    ) -> Result<CohortMatrix> {
        let n = patient_ids.len();
        let m = covariates.len();
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {n} patients",
                labels.len()
            )));
        }
        if row_offsets.len() != n + 1 || row_offsets.first() != Some(&0) {
            return Err(Error::Container(format!(
                "row offsets must hold {} entries starting at 0",
                n + 1
            )));
        }
        if column_indices.len() != values.len() || row_offsets[n] != values.len() {
            return Err(Error::Container(
                "column index, value, and offset lengths disagree".into(),
            ));
        }
        for w in row_offsets.windows(2) {
            if w[1] < w[0] {
                return Err(Error::Container("row offsets must be non-decreasing".into()));
            }
        }
        for i in 0..n {
            let cols = &column_indices[row_offsets[i]..row_offsets[i + 1]];
            for pair in cols.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(Error::Container(format!(
                        "columns of row {i} are not strictly increasing"
                    )));
                }
            }
            if let Some(&last) = cols.last() {
                if last >= m {
                    return Err(Error::CovariateOutOfRange { index: last, universe: m });
                }
            }
        }
        if values.iter().any(|&v| v == 0) {
            return Err(Error::Container("stored values must be positive".into()));
        }
        let covariates: IndexSet<String> = covariates.into_iter().collect();
        if covariates.len() != m {
            return Err(Error::Container("covariate codes are not unique".into()));
        }
        let mut seen = HashMap::with_capacity(n);
        for id in &patient_ids {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(Error::DuplicateLabel(id.clone()));
            }
        }
        Ok(CohortMatrix {
            row_offsets,
            column_indices,
            values,
            covariates,
            patient_ids,
            labels,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and counts of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[u32]) {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.column_indices[span.clone()], &self.values[span])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn column_indices(&self) -> &[usize] {
        &self.column_indices
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn patient_id(&self, i: usize) -> &str {
        &self.patient_ids[i]
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn covariate_code(&self, j: usize) -> &str {
        self.covariates.get_index(j).expect("column in range")
    }

    pub fn covariate_index(&self, code: &str) -> Option<usize> {
        self.covariates.get_index_of(code)
    }

    pub fn covariate_codes(&self) -> impl Iterator<Item = &str> {
        self.covariates.iter().map(|s| s.as_str())
    }

    /// Sum of all stored counts.
    pub fn total_count(&self) -> u64 {
        self.values.iter().map(|&v| v as u64).sum()
    }

    /// Number of rows with at least one stored entry per column.
    pub fn column_presence_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_covariates()];
        for &j in &self.column_indices {
            counts[j] += 1;
        }
        counts
    }

    /// Copies the rows at `indices` (strictly increasing) into a new matrix
    /// over the same covariate universe.
    pub fn select_rows(&self, indices: &[usize]) -> Result<CohortMatrix> {
        for pair in indices.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidParameter(
                    "row selection must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= self.n_patients() {
                return Err(Error::InvalidParameter(format!(
                    "row {last} outside cohort of {}",
                    self.n_patients()
                )));
            }
        }
        let mut row_offsets = Vec::with_capacity(indices.len() + 1);
        let mut column_indices = Vec::new();
        let mut values = Vec::new();
        let mut patient_ids = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        row_offsets.push(0);
        for &i in indices {
            let (cols, vals) = self.row(i);
            column_indices.extend_from_slice(cols);
            values.extend_from_slice(vals);
            row_offsets.push(column_indices.len());
            patient_ids.push(self.patient_ids[i].clone());
            labels.push(self.labels[i]);
        }
        Ok(CohortMatrix {
            row_offsets,
            column_indices,
            values,
            covariates: self.covariates.clone(),
            patient_ids,
            labels,
        })
    }

    /// Splits into (diagnosed, undiagnosed) sub-cohorts, both keeping the
    /// full covariate universe and the original relative row order.
    pub fn partition_by_label(&self) -> (CohortMatrix, CohortMatrix) {
        let diagnosed: Vec<usize> = (0..self.n_patients())
            .filter(|&i| self.labels[i] == Label::Diagnosed)
            .collect();
        let undiagnosed: Vec<usize> = (0..self.n_patients())
            .filter(|&i| self.labels[i] == Label::Undiagnosed)
            .collect();
        (
            self.select_rows(&diagnosed).expect("indices increasing"),
            self.select_rows(&undiagnosed).expect("indices increasing"),
        )
    }

    /// Keeps rows with at least `min_nnz` distinct covariates. The
    /// covariate universe and row order are unchanged.
    pub fn filter_min_support(&self, min_nnz: usize) -> CohortMatrix {
        let keep: Vec<usize> = (0..self.n_patients())
            .filter(|&i| self.row_nnz(i) >= min_nnz)
            .collect();
        self.select_rows(&keep).expect("indices increasing")
    }

    /// Draws a uniform validation sample of exactly `n_validation` rows
    /// without replacement; the remainder forms the training cohort. The
    /// same seed reproduces the same split, and both sides preserve the
    /// original relative row order.
    pub fn split_train_validation(&self, n_validation: usize, split_seed: u64) -> Result<CohortSplit> {
        let n = self.n_patients();
        if n_validation > n {
            return Err(Error::ValidationSizeExceeded {
                requested: n_validation,
                available: n,
            });
        }
        let mut rng = seed::stream(split_seed);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in 0..n_validation {
            let j = rng.random_range(i..n);
            indices.swap(i, j);
        }
        let mut validation: Vec<usize> = indices[..n_validation].to_vec();
        let mut training: Vec<usize> = indices[n_validation..].to_vec();
        validation.sort_unstable();
        training.sort_unstable();
        Ok(CohortSplit {
            training: self.select_rows(&training)?,
            validation: self.select_rows(&validation)?,
            seed: split_seed,
        })
    }
}

/// Result of a train/validation split.
#[derive(Debug, Clone)]
pub struct CohortSplit {
    pub training: CohortMatrix,
    pub validation: CohortMatrix,
    pub seed: u64,
}

/// Ingests an event stream against a labeled patient list.
///
/// Rows follow the label list order; columns follow first mention of each
/// covariate code in the stream. Counts for repeated (patient, covariate)
/// pairs are summed and zero totals are dropped. Events for unlabeled
/// patients, negative counts, and duplicate label entries are rejected.
pub fn ingest_event_stream<I>(events: I, labels: &[(String, Label)]) -> Result<CohortMatrix>
where
    I: IntoIterator<Item = Result<EventRecord>>,
{
    let mut patient_rows: HashMap<String, usize> = HashMap::with_capacity(labels.len());
    for (row, (id, _)) in labels.iter().enumerate() {
        match patient_rows.entry(id.clone()) {
            Entry::Occupied(_) => return Err(Error::DuplicateLabel(id.clone())),
            Entry::Vacant(slot) => {
                slot.insert(row);
            }
        }
    }
    let mut covariates: IndexSet<String> = IndexSet::new();
    let mut rows: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); labels.len()];
    for event in events {
        let event = event?;
        let row = *patient_rows
            .get(&event.patient_id)
            .ok_or_else(|| Error::UnlabeledPatient(event.patient_id.clone()))?;
        if event.count < 0 {
            return Err(Error::NegativeCount {
                patient: event.patient_id,
                covariate: event.covariate_code,
                count: event.count,
            });
        }
        let (col, _) = covariates.insert_full(event.covariate_code);
        let cell = rows[row].entry(col).or_insert(0);
        *cell = cell
            .checked_add(event.count as u64)
            .ok_or_else(|| Error::CountOverflow(event.patient_id.clone()))?;
    }

    let mut row_offsets = Vec::with_capacity(labels.len() + 1);
    let mut column_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for (row, cells) in rows.into_iter().enumerate() {
        for (col, total) in cells {
            if total == 0 {
                continue;
            }
            let total = u32::try_from(total)
                .map_err(|_| Error::CountOverflow(labels[row].0.clone()))?;
            column_indices.push(col);
            values.push(total);
        }
        row_offsets.push(column_indices.len());
    }
    Ok(CohortMatrix {
        row_offsets,
        column_indices,
        values,
        covariates,
        patient_ids: labels.iter().map(|(id, _)| id.clone()).collect(),
        labels: labels.iter().map(|(_, label)| *label).collect(),
    })
}

/// [`ingest_event_stream`] over an infallible event source.
pub fn ingest_events<I>(events: I, labels: &[(String, Label)]) -> Result<CohortMatrix>
where
    I: IntoIterator<Item = EventRecord>,
{
    ingest_event_stream(events.into_iter().map(Ok), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(p: &str, c: &str, n: i64) -> EventRecord {
        EventRecord {
            patient_id: p.into(),
            covariate_code: c.into(),
            count: n,
        }
    }

    fn lab(pairs: &[(&str, Label)]) -> Vec<(String, Label)> {
        pairs.iter().map(|(p, l)| (p.to_string(), *l)).collect()
    }

    #[test]
    fn two_by_two_ingest() {
        let m = ingest_events(
            [ev("p1", "A", 1), ev("p2", "B", 4)],
            &lab(&[("p1", Label::Diagnosed), ("p2", Label::Undiagnosed)]),
        )
        .unwrap();
        assert_eq!((m.n_patients(), m.n_covariates(), m.nnz()), (2, 2, 2));
        assert_eq!(m.covariate_index("A"), Some(0));
        assert_eq!(m.covariate_index("B"), Some(1));
        assert_eq!(m.row(0), (&[0usize][..], &[1u32][..]));
        assert_eq!(m.row(1), (&[1usize][..], &[4u32][..]));
        assert_eq!(m.label(0), Label::Diagnosed);
    }

    #[test]
    fn duplicates_sum_and_zero_counts_drop() {
        let m = ingest_events(
            [ev("p1", "A", 2), ev("p1", "A", 1), ev("p1", "B", 0)],
            &lab(&[("p1", Label::Diagnosed)]),
        )
        .unwrap();
        assert_eq!(m.n_patients(), 1);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.row(0), (&[0usize][..], &[3u32][..]));
        // A zero-count mention still registers the code in the dictionary.
        assert_eq!(m.covariate_index("B"), Some(1));
    }

    #[test]
    fn empty_stream_gives_empty_rows() {
        let m = ingest_events([], &lab(&[("p1", Label::Undiagnosed)])).unwrap();
        assert_eq!((m.n_patients(), m.n_covariates(), m.nnz()), (1, 0, 0));
        assert_eq!(m.row_nnz(0), 0);
    }

    #[test]
    fn unlabeled_patient_rejected_by_name() {
        let err = ingest_events([ev("ghost", "A", 1)], &lab(&[("p1", Label::Diagnosed)]))
            .unwrap_err();
        assert!(matches!(err, Error::UnlabeledPatient(ref p) if p == "ghost"));
    }

    #[test]
    fn negative_count_rejected() {
        let err = ingest_events([ev("p1", "A", -2)], &lab(&[("p1", Label::Diagnosed)]))
            .unwrap_err();
        assert!(matches!(err, Error::NegativeCount { count: -2, .. }));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let err = ingest_events(
            [],
            &lab(&[("p1", Label::Diagnosed), ("p1", Label::Diagnosed)]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateLabel(ref p) if p == "p1"));
    }

    #[test]
    fn rows_follow_label_order_not_event_order() {
        let m = ingest_events(
            [ev("p2", "A", 1), ev("p1", "B", 1)],
            &lab(&[("p1", Label::Diagnosed), ("p2", Label::Diagnosed)]),
        )
        .unwrap();
        assert_eq!(m.patient_id(0), "p1");
        assert_eq!(m.patient_id(1), "p2");
        // Columns follow first-seen order in the stream.
        assert_eq!(m.covariate_index("A"), Some(0));
        assert_eq!(m.row(0), (&[1usize][..], &[1u32][..]));
    }

    #[test]
    fn filter_keeps_rows_at_or_above_threshold() {
        let events: Vec<EventRecord> = (0..1)
            .map(|_| ev("a", "c0", 1))
            .chain((0..5).map(|i| ev("b", &format!("c{i}"), 1)))
            .chain((0..7).map(|i| ev("c", &format!("c{i}"), 1)))
            .collect();
        let m = ingest_events(
            events,
            &lab(&[
                ("a", Label::Diagnosed),
                ("b", Label::Diagnosed),
                ("c", Label::Diagnosed),
            ]),
        )
        .unwrap();
        let f = m.filter_min_support(5);
        assert_eq!(f.n_patients(), 2);
        assert_eq!(f.patient_id(0), "b");
        assert_eq!(f.n_covariates(), m.n_covariates());

        assert_eq!(m.filter_min_support(0).n_patients(), 3);
        assert_eq!(m.filter_min_support(8).n_patients(), 0);
    }

    #[test]
    fn filter_keeps_all_when_threshold_zero_even_for_empty_rows() {
        let m = ingest_events([ev("a", "x", 1)], &lab(&[("a", Label::Diagnosed), ("b", Label::Undiagnosed)]))
            .unwrap();
        let f = m.filter_min_support(0);
        assert_eq!(f.n_patients(), 2);
        assert_eq!(f.row_nnz(1), 0);
    }

    #[test]
    fn split_sizes_disjoint_and_seeded() {
        let labels: Vec<(String, Label)> = (0..20)
            .map(|i| (format!("p{i}"), Label::Diagnosed))
            .collect();
        let events: Vec<EventRecord> = (0..20).map(|i| ev(&format!("p{i}"), "A", i + 1)).collect();
        let m = ingest_events(events, &labels).unwrap();

        let s1 = m.split_train_validation(5, 9).unwrap();
        let s2 = m.split_train_validation(5, 9).unwrap();
        let s3 = m.split_train_validation(5, 10).unwrap();
        assert_eq!(s1.validation.n_patients(), 5);
        assert_eq!(s1.training.n_patients(), 15);
        let ids = |m: &CohortMatrix| m.patient_ids().to_vec();
        assert_eq!(ids(&s1.validation), ids(&s2.validation));
        assert_ne!(ids(&s1.validation), ids(&s3.validation));

        let mut all: Vec<String> = ids(&s1.training);
        all.extend(ids(&s1.validation));
        all.sort();
        let mut expect: Vec<String> = labels.iter().map(|(p, _)| p.clone()).collect();
        expect.sort();
        assert_eq!(all, expect);
    }

    #[test]
    fn split_extremes_and_overflow() {
        let m = ingest_events([ev("a", "x", 1)], &lab(&[("a", Label::Diagnosed), ("b", Label::Diagnosed)]))
            .unwrap();
        assert_eq!(m.split_train_validation(0, 1).unwrap().validation.n_patients(), 0);
        assert_eq!(m.split_train_validation(2, 1).unwrap().training.n_patients(), 0);
        assert!(matches!(
            m.split_train_validation(3, 1).unwrap_err(),
            Error::ValidationSizeExceeded { requested: 3, available: 2 }
        ));
    }

    #[test]
    fn partition_by_label_preserves_order_and_universe() {
        let m = ingest_events(
            [ev("a", "x", 1), ev("b", "y", 2), ev("c", "x", 3)],
            &lab(&[
                ("a", Label::Diagnosed),
                ("b", Label::Undiagnosed),
                ("c", Label::Diagnosed),
            ]),
        )
        .unwrap();
        let (d, u) = m.partition_by_label();
        assert_eq!(d.patient_ids(), &["a".to_string(), "c".to_string()]);
        assert_eq!(u.patient_ids(), &["b".to_string()]);
        assert_eq!(d.n_covariates(), 2);
        assert_eq!(u.n_covariates(), 2);
        assert_eq!(u.row(0), (&[1usize][..], &[2u32][..]));
    }

    #[test]
    fn presence_counts_per_column() {
        let m = ingest_events(
            [ev("a", "x", 5), ev("b", "x", 1), ev("b", "y", 2)],
            &lab(&[("a", Label::Diagnosed), ("b", Label::Diagnosed)]),
        )
        .unwrap();
        assert_eq!(m.column_presence_counts(), vec![2, 1]);
    }

    #[test]
    fn csr_parts_validation() {
        let bad = CohortMatrix::from_csr_parts(
            vec![0, 2],
            vec![1, 0],
            vec![1, 1],
            vec!["a".into(), "b".into()],
            vec!["p".into()],
            vec![Label::Diagnosed],
        );
        assert!(bad.is_err(), "unsorted columns must be rejected");

        let bad = CohortMatrix::from_csr_parts(
            vec![0, 1],
            vec![0],
            vec![0],
            vec!["a".into()],
            vec!["p".into()],
            vec![Label::Diagnosed],
        );
        assert!(bad.is_err(), "zero stored value must be rejected");
    }
}
