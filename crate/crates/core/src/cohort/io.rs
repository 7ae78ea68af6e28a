//! On-disk cohort formats.
//!
//! Events and labels arrive as tab-separated text. A stored cohort is a
//! directory with three files: `matrix.csr` (binary CSR container),
//! `covariates.tsv` (`code<TAB>column_index` in column order), and
//! `patients.tsv` (`patient_id<TAB>label` in row order).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{read_u32, read_u64, write_u32, write_u64};
use crate::cohort::{CohortMatrix, EventRecord, Label};
use crate::error::{io_context, Error, Result};

/// Container magic for the binary CSR matrix.
const CSR_MAGIC: &[u8; 4] = b"RFCM";
const CSR_VERSION: u32 = 1;

pub const MATRIX_FILE: &str = "matrix.csr";
pub const COVARIATES_FILE: &str = "covariates.tsv";
pub const PATIENTS_FILE: &str = "patients.tsv";

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Streaming reader over `patient_id<TAB>covariate_code<TAB>count` lines.
pub struct EventFileReader {
    path: std::path::PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl EventFileReader {
    pub fn open(path: impl AsRef<Path>) -> Result<EventFileReader> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| io_context(&path, e))?;
        Ok(EventFileReader {
            path,
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }

    fn parse(&self, line: &str) -> Result<EventRecord> {
        let mut fields = line.split('\t');
        let patient = fields.next().unwrap_or_default();
        let code = fields.next();
        let count = fields.next();
        match (code, count, fields.next()) {
            (Some(code), Some(count), None) if !patient.is_empty() && !code.is_empty() => {
                let count: i64 = count.parse().map_err(|_| {
                    format_err(&self.path, self.line_no, format!("bad count {count:?}"))
                })?;
                Ok(EventRecord {
                    patient_id: patient.to_string(),
                    covariate_code: code.to_string(),
                    count,
                })
            }
            _ => Err(format_err(
                &self.path,
                self.line_no,
                "expected patient_id<TAB>covariate_code<TAB>count",
            )),
        }
    }
}

impl Iterator for EventFileReader {
    type Item = Result<EventRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            return Some(self.parse(line));
        }
    }
}

/// Reads `patient_id<TAB>{1|0}` lines; order in the file becomes row order.
pub fn read_labels_file(path: impl AsRef<Path>) -> Result<Vec<(String, Label)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_context(path, e))?;
    let mut labels = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (id, flag, extra) = (fields.next().unwrap_or_default(), fields.next(), fields.next());
        let parsed = match (flag, extra) {
            (Some(flag), None) if !id.is_empty() => Label::from_flag(flag),
            _ => None,
        };
        match parsed {
            Some(label) => labels.push((id.to_string(), label)),
            None => return Err(format_err(path, idx + 1, "expected patient_id<TAB>{1|0}")),
        }
    }
    Ok(labels)
}

pub fn write_labels_file(path: impl AsRef<Path>, labels: &[(String, Label)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (id, label) in labels {
        writeln!(w, "{id}\t{}", label.as_flag())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the matrix back out as an event file (row order, then column
/// order within each row).
pub fn write_events_file(path: impl AsRef<Path>, matrix: &CohortMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..matrix.n_patients() {
        let (cols, vals) = matrix.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            writeln!(w, "{}\t{}\t{v}", matrix.patient_id(i), matrix.covariate_code(j))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_covariates_file(path: &Path, matrix: &CohortMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (j, code) in matrix.covariate_codes().enumerate() {
        writeln!(w, "{code}\t{j}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `code<TAB>column_index` dictionary; indices must be exactly
/// 0..len in file order.
pub fn read_covariates_file(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_context(path, e))?;
    let mut codes = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (code, col, extra) = (fields.next().unwrap_or_default(), fields.next(), fields.next());
        let col: usize = match (col, extra) {
            (Some(col), None) if !code.is_empty() => col
                .parse()
                .map_err(|_| format_err(path, idx + 1, format!("bad column index {col:?}")))?,
            _ => return Err(format_err(path, idx + 1, "expected code<TAB>column_index")),
        };
        if col != codes.len() {
            return Err(format_err(path, idx + 1, format!("column index {col} out of order")));
        }
        codes.push(code.to_string());
    }
    Ok(codes)
}

fn write_patients_file(path: &Path, matrix: &CohortMatrix) -> Result<()> {
    let pairs: Vec<(String, Label)> = matrix
        .patient_ids()
        .iter()
        .cloned()
        .zip(matrix.labels().iter().copied())
        .collect();
    write_labels_file(path, &pairs)
}

fn write_matrix_file(path: &Path, matrix: &CohortMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CSR_MAGIC)?;
    write_u32(&mut w, CSR_VERSION)?;
    write_u64(&mut w, matrix.n_patients() as u64)?;
    write_u64(&mut w, matrix.n_covariates() as u64)?;
    write_u64(&mut w, matrix.nnz() as u64)?;
    for &off in matrix.row_offsets() {
        write_u64(&mut w, off as u64)?;
    }
    for &col in matrix.column_indices() {
        write_u64(&mut w, col as u64)?;
    }
    for &v in matrix.values() {
        write_u32(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

struct RawCsr {
    n_patients: usize,
    n_covariates: usize,
    row_offsets: Vec<usize>,
    column_indices: Vec<usize>,
    values: Vec<u32>,
}

fn read_matrix_file(path: &Path) -> Result<RawCsr> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CSR_MAGIC {
        return Err(Error::Container(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CSR_VERSION {
        return Err(Error::Container(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let n = read_u64(&mut r)? as usize;
    let m = read_u64(&mut r)? as usize;
    let nnz = read_u64(&mut r)? as usize;
    let mut row_offsets = Vec::with_capacity(n + 1);
    for _ in 0..=n {
        row_offsets.push(read_u64(&mut r)? as usize);
    }
    let mut column_indices = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        column_indices.push(read_u64(&mut r)? as usize);
    }
    let mut values = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        values.push(read_u32(&mut r)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Container(format!(
            "{}: trailing bytes after matrix payload",
            path.display()
        )));
    }
    Ok(RawCsr {
        n_patients: n,
        n_covariates: m,
        row_offsets,
        column_indices,
        values,
    })
}

/// Writes the cohort as a directory artifact.
pub fn save_dir(dir: impl AsRef<Path>, matrix: &CohortMatrix) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_matrix_file(&dir.join(MATRIX_FILE), matrix)?;
    write_covariates_file(&dir.join(COVARIATES_FILE), matrix)?;
    write_patients_file(&dir.join(PATIENTS_FILE), matrix)?;
    Ok(())
}

/// Loads a cohort directory, re-validating every structural invariant.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<CohortMatrix> {
    let dir = dir.as_ref();
    let raw = read_matrix_file(&dir.join(MATRIX_FILE))?;
    let covariates = read_covariates_file(dir.join(COVARIATES_FILE))?;
    let patients = read_labels_file(dir.join(PATIENTS_FILE))?;
    if covariates.len() != raw.n_covariates {
        return Err(Error::Container(format!(
            "{}: dictionary lists {} covariates, matrix holds {}",
            dir.display(),
            covariates.len(),
            raw.n_covariates
        )));
    }
    if patients.len() != raw.n_patients {
        return Err(Error::Container(format!(
            "{}: patient file lists {} rows, matrix holds {}",
            dir.display(),
            patients.len(),
            raw.n_patients
        )));
    }
    let (patient_ids, labels): (Vec<String>, Vec<Label>) = patients.into_iter().unzip();
    CohortMatrix::from_csr_parts(
        raw.row_offsets,
        raw.column_indices,
        raw.values,
        covariates,
        patient_ids,
        labels,
    )
}

/// Convenience: ingest a cohort straight from event + label files.
pub fn ingest_files(
    events_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<CohortMatrix> {
    let labels = read_labels_file(labels_path)?;
    let events = EventFileReader::open(events_path)?;
    crate::cohort::ingest_event_stream(events, &labels)
}
