use std::path::Path;

use ndarray::{Array1, Array2};
use rgcca::{Error, Result};

/// All numeric output goes through this: 17 significant digits, so a
/// value survives a round trip through text unchanged.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    }
}

pub fn open_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

pub fn write_record<W: std::io::Write>(
    writer: &mut csv::Writer<W>,
    path: &Path,
    fields: &[String],
) -> Result<()> {
    writer.write_record(fields).map_err(|e| csv_err(path, e))
}

pub fn finish<W: std::io::Write>(mut writer: csv::Writer<W>, path: &Path) -> Result<()> {
    writer
        .flush()
        .map_err(|e| csv_err(path, csv::Error::from(e)))
}

/// Single-column vector file with a `value` header.
pub fn read_vector_csv(path: &Path) -> Result<Array1<f64>> {
    let (matrix, _) = rgcca::read_matrix_csv(path)?;
    if matrix.ncols() != 1 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected a single column, found {}", matrix.ncols()),
        });
    }
    Ok(matrix.column(0).to_owned())
}

pub fn write_vector_csv(path: &Path, v: &Array1<f64>) -> Result<()> {
    let mut w = open_writer(path)?;
    write_record(&mut w, path, &["value".to_string()])?;
    for &x in v.iter() {
        write_record(&mut w, path, &[fmt17(x)])?;
    }
    finish(w, path)
}

pub fn write_matrix_csv(path: &Path, m: &Array2<f64>, headers: &[String]) -> Result<()> {
    let mut w = open_writer(path)?;
    write_record(&mut w, path, headers)?;
    for row in m.rows() {
        let fields: Vec<String> = row.iter().map(|&x| fmt17(x)).collect();
        write_record(&mut w, path, &fields)?;
    }
    finish(w, path)
}
