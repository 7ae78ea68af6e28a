//! Prevalence and divergence weighting of covariates.
//!
//! A covariate's prevalence in a cohort is the fraction of patients with a
//! positive count. Each selected covariate is weighted by the binary
//! Kullback-Leibler divergence between its diagnosed and undiagnosed
//! prevalences, smoothed by an epsilon added to all four terms so that
//! degenerate prevalences (0 or 1) stay finite:
//!
//!   d = (p_d+e) ln((p_d+e)/(p_u+e)) + (1-p_d+e) ln((1-p_d+e)/(1-p_u+e))
//!
//! Both smoothed pairs sum to 1+2e, so d >= 0 with equality exactly at
//! p_d = p_u.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::cohort::CohortMatrix;
use crate::error::{io_context, Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Fraction of patients with a positive count, per requested covariate,
/// aligned to `features` order.
pub fn prevalence(matrix: &CohortMatrix, features: &[usize]) -> Result<Vec<f64>> {
    let n = matrix.n_patients();
    if n == 0 {
        return Err(Error::EmptyInput("cohort"));
    }
    let universe = matrix.n_covariates();
    for &j in features {
        if j >= universe {
            return Err(Error::CovariateOutOfRange { index: j, universe });
        }
    }
    let counts = matrix.column_presence_counts();
    Ok(features.iter().map(|&j| counts[j] as f64 / n as f64).collect())
}

/// Smoothed binary KL divergence between two prevalences.
pub fn kl_divergence(p_diagnosed: f64, p_undiagnosed: f64, epsilon: f64) -> Result<f64> {
    for p in [p_diagnosed, p_undiagnosed] {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(Error::ProbabilityOutOfRange(p));
        }
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    let a = p_diagnosed + epsilon;
    let b = p_undiagnosed + epsilon;
    let a1 = 1.0 - p_diagnosed + epsilon;
    let b1 = 1.0 - p_undiagnosed + epsilon;
    Ok(a * (a / b).ln() + a1 * (a1 / b1).ln())
}

/// Per-covariate prevalences and divergence weights over a selected set.
#[derive(Debug, Clone)]
pub struct DivergenceTable {
    covariates: Vec<usize>,
    p_diagnosed: Vec<f64>,
    p_undiagnosed: Vec<f64>,
    kl: Vec<f64>,
    epsilon: f64,
}

impl DivergenceTable {
    /// Computes the table for `features` (kept in the given order) from a
    /// diagnosed and an undiagnosed cohort over the same covariate
    /// universe.
    pub fn compute(
        diagnosed: &CohortMatrix,
        undiagnosed: &CohortMatrix,
        features: &[usize],
        epsilon: f64,
    ) -> Result<DivergenceTable> {
        if diagnosed.n_covariates() != undiagnosed.n_covariates() {
            return Err(Error::MisalignedFeatures(format!(
                "diagnosed universe has {} covariates, undiagnosed {}",
                diagnosed.n_covariates(),
                undiagnosed.n_covariates()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &j in features {
            if !seen.insert(j) {
                return Err(Error::InvalidParameter(format!(
                    "covariate column {j} listed twice"
                )));
            }
        }
        for &j in features {
            if j < diagnosed.n_covariates()
                && diagnosed.covariate_code(j) != undiagnosed.covariate_code(j)
            {
                return Err(Error::MisalignedFeatures(format!(
                    "column {j} is {:?} in the diagnosed cohort but {:?} in the undiagnosed",
                    diagnosed.covariate_code(j),
                    undiagnosed.covariate_code(j)
                )));
            }
        }
        let p_diagnosed = prevalence(diagnosed, features)?;
        let p_undiagnosed = prevalence(undiagnosed, features)?;
        let kl = p_diagnosed
            .iter()
            .zip(&p_undiagnosed)
            .map(|(&pd, &pu)| kl_divergence(pd, pu, epsilon))
            .collect::<Result<Vec<f64>>>()?;
        Ok(DivergenceTable {
            covariates: features.to_vec(),
            p_diagnosed,
            p_undiagnosed,
            kl,
            epsilon,
        })
    }

    /// Builds a table from already-computed values, validating ranges.
    pub fn from_parts(
        covariates: Vec<usize>,
        p_diagnosed: Vec<f64>,
        p_undiagnosed: Vec<f64>,
        kl: Vec<f64>,
        epsilon: f64,
    ) -> Result<DivergenceTable> {
        let len = covariates.len();
        if p_diagnosed.len() != len || p_undiagnosed.len() != len || kl.len() != len {
            return Err(Error::DimensionMismatch(
                "divergence table columns differ in length".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for &j in &covariates {
            if !seen.insert(j) {
                return Err(Error::InvalidParameter(format!(
                    "covariate column {j} listed twice"
                )));
            }
        }
        for &p in p_diagnosed.iter().chain(&p_undiagnosed) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ProbabilityOutOfRange(p));
            }
        }
        if kl.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("divergence weights"));
        }
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::NonPositiveEpsilon(epsilon));
        }
        Ok(DivergenceTable {
            covariates,
            p_diagnosed,
            p_undiagnosed,
            kl,
            epsilon,
        })
    }

    pub fn covariates(&self) -> &[usize] {
        &self.covariates
    }

    pub fn p_diagnosed(&self) -> &[f64] {
        &self.p_diagnosed
    }

    pub fn p_undiagnosed(&self) -> &[f64] {
        &self.p_undiagnosed
    }

    pub fn kl(&self) -> &[f64] {
        &self.kl
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }
}

/// Writes `covariate_code<TAB>prevalence` rows.
pub fn write_prevalence_file(
    path: impl AsRef<Path>,
    matrix: &CohortMatrix,
    features: &[usize],
    values: &[f64],
) -> Result<()> {
    if features.len() != values.len() {
        return Err(Error::DimensionMismatch(
            "prevalence rows and features differ in length".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for (&j, &p) in features.iter().zip(values) {
        writeln!(w, "{}\t{p}", matrix.covariate_code(j))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_prevalence_file(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(File::open(path).map_err(|e| io_context(path, e))?).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parsed = match (fields.next(), fields.next(), fields.next()) {
            (Some(code), Some(p), None) if !code.is_empty() => {
                p.parse::<f64>().ok().map(|p| (code.to_string(), p))
            }
            _ => None,
        };
        match parsed {
            Some(row) => rows.push(row),
            None => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: "expected covariate_code<TAB>prevalence".into(),
                })
            }
        }
    }
    Ok(rows)
}

/// Writes `covariate_code<TAB>p_diagnosed<TAB>p_undiagnosed<TAB>kl` rows
/// in table order.
pub fn write_divergence_file(
    path: impl AsRef<Path>,
    matrix: &CohortMatrix,
    table: &DivergenceTable,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (idx, &j) in table.covariates().iter().enumerate() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            matrix.covariate_code(j),
            table.p_diagnosed()[idx],
            table.p_undiagnosed()[idx],
            table.kl()[idx]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Raw divergence rows: (code, p_diagnosed, p_undiagnosed, kl).
pub fn read_divergence_file(path: impl AsRef<Path>) -> Result<Vec<(String, f64, f64, f64)>> {
    let path = path.as_ref();
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(File::open(path).map_err(|e| io_context(path, e))?).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = if fields.len() == 4 && !fields[0].is_empty() {
            match (
                fields[1].parse::<f64>(),
                fields[2].parse::<f64>(),
                fields[3].parse::<f64>(),
            ) {
                (Ok(pd), Ok(pu), Ok(kl)) => Some((fields[0].to_string(), pd, pu, kl)),
                _ => None,
            }
        } else {
            None
        };
        match parsed {
            Some(row) => rows.push(row),
            None => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: "expected code<TAB>p_diagnosed<TAB>p_undiagnosed<TAB>kl".into(),
                })
            }
        }
    }
    Ok(rows)
}

/// Resolves code-keyed divergence rows against a cohort's dictionary.
pub fn resolve_divergence_rows(
    rows: &[(String, f64, f64, f64)],
    matrix: &CohortMatrix,
    epsilon: f64,
) -> Result<DivergenceTable> {
    let mut covariates = Vec::with_capacity(rows.len());
    let mut p_d = Vec::with_capacity(rows.len());
    let mut p_u = Vec::with_capacity(rows.len());
    let mut kl = Vec::with_capacity(rows.len());
    for (code, pd, pu, d) in rows {
        let j = matrix.covariate_index(code).ok_or_else(|| {
            Error::MisalignedFeatures(format!("covariate {code:?} is not in the cohort dictionary"))
        })?;
        covariates.push(j);
        p_d.push(*pd);
        p_u.push(*pu);
        kl.push(*d);
    }
    DivergenceTable::from_parts(covariates, p_d, p_u, kl, epsilon)
}
