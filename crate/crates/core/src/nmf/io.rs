//! On-disk factorization artifacts: the `k<TAB>error` sweep curve and a
//! binary container for a fitted factor pair.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{read_f64, read_u32, read_u64, write_f64, write_u32, write_u64};
use crate::dense::DenseMatrix;
use crate::error::{io_context, Error, Result};
use crate::nmf::{ErrorCurve, FactorModel};

const FACTOR_MAGIC: &[u8; 4] = b"RFFM";
const FACTOR_VERSION: u32 = 1;

pub fn write_error_curve(path: impl AsRef<Path>, curve: &ErrorCurve) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &(k, error) in curve.entries() {
        writeln!(w, "{k}\t{error}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `k<TAB>error` curve back as raw entries (the seed is carried by
/// the run manifest, not the curve file).
pub fn read_error_curve(path: impl AsRef<Path>) -> Result<Vec<(usize, f64)>> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(File::open(path).map_err(|e| io_context(path, e))?).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parsed = match (fields.next(), fields.next(), fields.next()) {
            (Some(k), Some(e), None) => k.parse::<usize>().ok().zip(e.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(pair) => entries.push(pair),
            None => {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: "expected k<TAB>error".into(),
                })
            }
        }
    }
    Ok(entries)
}

/// Writes a fitted model: dims, seed, iteration count, final error, then W
/// and H row-major as little-endian f64.
pub fn write_factors(path: impl AsRef<Path>, model: &FactorModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FACTOR_MAGIC)?;
    write_u32(&mut w, FACTOR_VERSION)?;
    write_u64(&mut w, model.w.n_rows() as u64)?;
    write_u64(&mut w, model.h.n_cols() as u64)?;
    write_u64(&mut w, model.k as u64)?;
    write_u64(&mut w, model.seed)?;
    write_u64(&mut w, model.n_iterations as u64)?;
    write_f64(&mut w, model.final_error)?;
    for &v in model.w.data() {
        write_f64(&mut w, v)?;
    }
    for &v in model.h.data() {
        write_f64(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a factor container. The per-iteration error trace is a training
/// diagnostic and is not persisted, so the returned history holds only the
/// final error.
pub fn read_factors(path: impl AsRef<Path>) -> Result<FactorModel> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| io_context(path, e))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FACTOR_MAGIC {
        return Err(Error::Container(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != FACTOR_VERSION {
        return Err(Error::Container(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let n = read_u64(&mut r)? as usize;
    let m = read_u64(&mut r)? as usize;
    let k = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let n_iterations = read_u64(&mut r)? as usize;
    let final_error = read_f64(&mut r)?;
    let mut w_data = vec![0.0; n * k];
    for v in &mut w_data {
        *v = read_f64(&mut r)?;
    }
    let mut h_data = vec![0.0; k * m];
    for v in &mut h_data {
        *v = read_f64(&mut r)?;
    }
    Ok(FactorModel {
        w: DenseMatrix::from_vec(n, k, w_data)?,
        h: DenseMatrix::from_vec(k, m, h_data)?,
        k,
        seed,
        n_iterations,
        final_error,
        error_history: vec![final_error],
    })
}
