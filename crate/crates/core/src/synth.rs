//! Seeded synthetic cohort generator with planted latent structure.
//!
//! Covariates are laid out as disjoint per-component signature blocks
//! followed by background columns. Each diagnosed patient draws one or
//! two components and expresses their signature covariates independently
//! at a high rate; a known fraction of the undiagnosed cohort ("hidden
//! positives") is generated with the same recipe, while the rest express
//! signatures only at a low rate. Background columns appear everywhere
//! at a small rate. Every random decision flows from one seed through
//! per-row streams, so generation is reproducible row by row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::{CohortMatrix, Label};
use crate::error::{Error, Result};
use crate::seed::{self, stage};

pub const EVENTS_FILE: &str = "events.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const TRUTH_PATIENTS_FILE: &str = "truth_patients.tsv";
pub const TRUTH_COVARIATES_FILE: &str = "truth_covariates.tsv";

/// Generator settings; see [`SynthConfig::standard`] for the reference
/// desk-scale setup.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_diagnosed: usize,
    pub n_undiagnosed: usize,
    pub n_covariates: usize,
    pub n_components: usize,
    pub signature_size: usize,
    pub signal_prevalence_diag: f64,
    pub signal_prevalence_undiag: f64,
    pub hidden_positive_rate: f64,
    pub background_rate: f64,
    pub count_max: u32,
    pub seed: u64,
}

impl SynthConfig {
    /// The reference configuration: 2,000 diagnosed and 10,000
    /// undiagnosed patients over 500 covariates, four planted components
    /// of ten covariates each.
    pub fn standard(seed: u64) -> SynthConfig {
        SynthConfig {
            n_diagnosed: 2000,
            n_undiagnosed: 10_000,
            n_covariates: 500,
            n_components: 4,
            signature_size: 10,
            signal_prevalence_diag: 0.6,
            signal_prevalence_undiag: 0.05,
            hidden_positive_rate: 0.1,
            background_rate: 0.02,
            count_max: 5,
            seed,
        }
    }

    pub fn with_cohort_sizes(mut self, n_diagnosed: usize, n_undiagnosed: usize) -> SynthConfig {
        self.n_diagnosed = n_diagnosed;
        self.n_undiagnosed = n_undiagnosed;
        self
    }

    pub fn with_covariates(mut self, n_covariates: usize) -> SynthConfig {
        self.n_covariates = n_covariates;
        self
    }

    pub fn with_components(mut self, n_components: usize, signature_size: usize) -> SynthConfig {
        self.n_components = n_components;
        self.signature_size = signature_size;
        self
    }

    pub fn with_signal_prevalence(mut self, diag: f64, undiag: f64) -> SynthConfig {
        self.signal_prevalence_diag = diag;
        self.signal_prevalence_undiag = undiag;
        self
    }

    pub fn with_hidden_positive_rate(mut self, rate: f64) -> SynthConfig {
        self.hidden_positive_rate = rate;
        self
    }

    pub fn with_background_rate(mut self, rate: f64) -> SynthConfig {
        self.background_rate = rate;
        self
    }

    pub fn with_count_max(mut self, count_max: u32) -> SynthConfig {
        self.count_max = count_max;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_diagnosed == 0 || self.n_undiagnosed == 0 {
            return Err(Error::InvalidParameter(
                "both cohorts need at least one patient".into(),
            ));
        }
        if self.n_components == 0 || self.signature_size == 0 {
            return Err(Error::InvalidParameter(
                "at least one component with a non-empty signature is required".into(),
            ));
        }
        if self.n_components * self.signature_size > self.n_covariates {
            return Err(Error::InvalidParameter(format!(
                "{} components of {} covariates do not fit in a universe of {}",
                self.n_components, self.signature_size, self.n_covariates
            )));
        }
        for (name, value) in [
            ("signal_prevalence_diag", self.signal_prevalence_diag),
            ("signal_prevalence_undiag", self.signal_prevalence_undiag),
            ("hidden_positive_rate", self.hidden_positive_rate),
            ("background_rate", self.background_rate),
        ] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {value}"
                )));
            }
        }
        if self.signal_prevalence_diag <= self.signal_prevalence_undiag {
            return Err(Error::InvalidParameter(format!(
                "diagnosed signal prevalence {} must exceed undiagnosed {}",
                self.signal_prevalence_diag, self.signal_prevalence_undiag
            )));
        }
        if self.count_max == 0 {
            return Err(Error::InvalidParameter(
                "count_max must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Ground truth saved alongside generated cohorts.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    covariate_component: Vec<i64>,
    hidden: Vec<bool>,
    diagnosed_components: Vec<Vec<usize>>,
    undiagnosed_components: Vec<Vec<usize>>,
}

impl SynthTruth {
    /// Planted component of a covariate column, `None` for background.
    pub fn component_of(&self, j: usize) -> Option<usize> {
        match self.covariate_component[j] {
            -1 => None,
            c => Some(c as usize),
        }
    }

    /// All signature columns, in index order.
    pub fn signature_columns(&self) -> Vec<usize> {
        (0..self.covariate_component.len())
            .filter(|&j| self.covariate_component[j] >= 0)
            .collect()
    }

    /// Hidden-positive flags aligned to undiagnosed rows.
    pub fn hidden_flags(&self) -> &[bool] {
        &self.hidden
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden.iter().filter(|&&h| h).count()
    }

    /// Components drawn per diagnosed patient.
    pub fn diagnosed_components(&self) -> &[Vec<usize>] {
        &self.diagnosed_components
    }

    /// Components drawn per undiagnosed patient (hidden positives and
    /// true negatives alike draw components; only the expression rate
    /// differs).
    pub fn undiagnosed_components(&self) -> &[Vec<usize>] {
        &self.undiagnosed_components
    }
}

/// One patient row: draws 1-2 distinct components, expresses their
/// signature covariates at `signal_p`, then background columns at the
/// background rate. Columns come out in ascending order.
fn generate_row(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    signal_p: f64,
) -> (Vec<usize>, Vec<u32>, Vec<usize>) {
    let k = cfg.n_components;
    let draw = (1 + usize::from(rng.random::<f64>() < 0.5)).min(k);
    let mut components = Vec::with_capacity(2);
    components.push(rng.random_range(0..k));
    if draw == 2 {
        loop {
            let second = rng.random_range(0..k);
            if second != components[0] {
                components.push(second);
                break;
            }
        }
    }
    components.sort_unstable();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for &c in &components {
        for j in c * cfg.signature_size..(c + 1) * cfg.signature_size {
            if rng.random::<f64>() < signal_p {
                cols.push(j);
                vals.push(rng.random_range(1..=cfg.count_max));
            }
        }
    }
    for j in k * cfg.signature_size..cfg.n_covariates {
        if rng.random::<f64>() < cfg.background_rate {
            cols.push(j);
            vals.push(rng.random_range(1..=cfg.count_max));
        }
    }
    (cols, vals, components)
}

fn assemble(
    rows: Vec<(Vec<usize>, Vec<u32>)>,
    codes: &[String],
    ids: Vec<String>,
    label: Label,
) -> Result<CohortMatrix> {
    let mut row_offsets = Vec::with_capacity(rows.len() + 1);
    row_offsets.push(0);
    let mut column_indices = Vec::new();
    let mut values = Vec::new();
    for (cols, vals) in rows {
        column_indices.extend(cols);
        values.extend(vals);
        row_offsets.push(column_indices.len());
    }
    let labels = vec![label; ids.len()];
    CohortMatrix::from_csr_parts(
        row_offsets,
        column_indices,
        values,
        codes.to_vec(),
        ids,
        labels,
    )
}

/// Generates (diagnosed, undiagnosed, truth) cohorts per the config.
pub fn generate(cfg: &SynthConfig) -> Result<(CohortMatrix, CohortMatrix, SynthTruth)> {
    cfg.validate()?;
    let codes: Vec<String> = (0..cfg.n_covariates).map(|j| format!("C{j:05}")).collect();
    let covariate_component: Vec<i64> = (0..cfg.n_covariates)
        .map(|j| {
            if j < cfg.n_components * cfg.signature_size {
                (j / cfg.signature_size) as i64
            } else {
                -1
            }
        })
        .collect();

    let diag_base = seed::derive_seed(cfg.seed, stage::SYNTH, 0);
    let undiag_base = seed::derive_seed(cfg.seed, stage::SYNTH, 1);

    let hidden_count = (cfg.hidden_positive_rate * cfg.n_undiagnosed as f64).round() as usize;
    let mut placement: Vec<usize> = (0..cfg.n_undiagnosed).collect();
    placement.shuffle(&mut seed::stream(seed::derive_seed(cfg.seed, stage::SYNTH, 2)));
    let mut hidden = vec![false; cfg.n_undiagnosed];
    for &i in &placement[..hidden_count] {
        hidden[i] = true;
    }

    let mut diag_rows = Vec::with_capacity(cfg.n_diagnosed);
    let mut diagnosed_components = Vec::with_capacity(cfg.n_diagnosed);
    for i in 0..cfg.n_diagnosed {
        let mut rng = seed::stream(seed::derive_seed(diag_base, stage::SYNTH, i as u64));
        let (cols, vals, comps) = generate_row(&mut rng, cfg, cfg.signal_prevalence_diag);
        diag_rows.push((cols, vals));
        diagnosed_components.push(comps);
    }
    let mut undiag_rows = Vec::with_capacity(cfg.n_undiagnosed);
    let mut undiagnosed_components = Vec::with_capacity(cfg.n_undiagnosed);
    for i in 0..cfg.n_undiagnosed {
        let mut rng = seed::stream(seed::derive_seed(undiag_base, stage::SYNTH, i as u64));
        let p = if hidden[i] {
            cfg.signal_prevalence_diag
        } else {
            cfg.signal_prevalence_undiag
        };
        let (cols, vals, comps) = generate_row(&mut rng, cfg, p);
        undiag_rows.push((cols, vals));
        undiagnosed_components.push(comps);
    }

    let diag_ids: Vec<String> = (0..cfg.n_diagnosed).map(|i| format!("D{i:06}")).collect();
    let undiag_ids: Vec<String> = (0..cfg.n_undiagnosed).map(|i| format!("U{i:06}")).collect();
    let diagnosed = assemble(diag_rows, &codes, diag_ids, Label::Diagnosed)?;
    let undiagnosed = assemble(undiag_rows, &codes, undiag_ids, Label::Undiagnosed)?;
    Ok((
        diagnosed,
        undiagnosed,
        SynthTruth {
            covariate_component,
            hidden,
            diagnosed_components,
            undiagnosed_components,
        },
    ))
}

/// Writes the combined event and label files for the two cohorts. The
/// first patient's block mentions every covariate (zero counts included)
/// so that re-ingesting reproduces the full dictionary in column order.
pub fn write_event_files(
    dir: impl AsRef<Path>,
    diagnosed: &CohortMatrix,
    undiagnosed: &CohortMatrix,
) -> Result<()> {
    let dir = dir.as_ref();
    let mut events = BufWriter::new(File::create(dir.join(EVENTS_FILE))?);
    let mut write_rows = |matrix: &CohortMatrix, register_universe: bool| -> Result<()> {
        for i in 0..matrix.n_patients() {
            let id = matrix.patient_id(i);
            let (cols, vals) = matrix.row(i);
            if register_universe && i == 0 {
                let mut next = 0;
                for j in 0..matrix.n_covariates() {
                    let count = if next < cols.len() && cols[next] == j {
                        next += 1;
                        vals[next - 1]
                    } else {
                        0
                    };
                    writeln!(events, "{id}\t{}\t{count}", matrix.covariate_code(j))?;
                }
            } else {
                for (&j, &v) in cols.iter().zip(vals) {
                    writeln!(events, "{id}\t{}\t{v}", matrix.covariate_code(j))?;
                }
            }
        }
        Ok(())
    };
    write_rows(diagnosed, true)?;
    write_rows(undiagnosed, false)?;
    events.flush()?;

    let mut labels = BufWriter::new(File::create(dir.join(LABELS_FILE))?);
    for matrix in [diagnosed, undiagnosed] {
        for i in 0..matrix.n_patients() {
            writeln!(
                labels,
                "{}\t{}",
                matrix.patient_id(i),
                matrix.label(i).as_flag()
            )?;
        }
    }
    labels.flush()?;
    Ok(())
}

/// Writes the truth sidecars: hidden flags for undiagnosed patients and
/// the covariate-to-component assignment (-1 = background).
pub fn write_truth_files(
    dir: impl AsRef<Path>,
    undiagnosed: &CohortMatrix,
    truth: &SynthTruth,
) -> Result<()> {
    let dir = dir.as_ref();
    let mut patients = BufWriter::new(File::create(dir.join(TRUTH_PATIENTS_FILE))?);
    for (i, &h) in truth.hidden_flags().iter().enumerate() {
        writeln!(
            patients,
            "{}\t{}",
            undiagnosed.patient_id(i),
            if h { 1 } else { 0 }
        )?;
    }
    patients.flush()?;

    let mut covs = BufWriter::new(File::create(dir.join(TRUTH_COVARIATES_FILE))?);
    for j in 0..undiagnosed.n_covariates() {
        writeln!(
            covs,
            "{}\t{}",
            undiagnosed.covariate_code(j),
            truth.covariate_component[j]
        )?;
    }
    covs.flush()?;
    Ok(())
}

/// Reads `patient_id<TAB>hidden{0|1}` rows.
pub fn read_truth_patients(path: impl AsRef<Path>) -> Result<Vec<(String, bool)>> {
    let path = path.as_ref();
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parsed = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some("0"), None) if !id.is_empty() => Some((id.to_string(), false)),
            (Some(id), Some("1"), None) if !id.is_empty() => Some((id.to_string(), true)),
            _ => None,
        };
        match parsed {
            Some(row) => rows.push(row),
            None => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: "expected patient_id<TAB>hidden{0|1}".into(),
                })
            }
        }
    }
    Ok(rows)
}

/// Reads `covariate_code<TAB>component` rows (-1 = background).
pub fn read_truth_covariates(path: impl AsRef<Path>) -> Result<Vec<(String, i64)>> {
    let path = path.as_ref();
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parsed = match (fields.next(), fields.next(), fields.next()) {
            (Some(code), Some(c), None) if !code.is_empty() => {
                c.parse::<i64>().ok().map(|c| (code.to_string(), c))
            }
            _ => None,
        };
        match parsed {
            Some(row) => rows.push(row),
            None => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: "expected covariate_code<TAB>component".into(),
                })
            }
        }
    }
    Ok(rows)
}
