//! Matrix files and result output.
//!
//! Binary layout (little endian): magic `RGOFMAT\0`, `u32` version, `u64`
//! rows, `u64` columns, then `rows * cols` row-major `f64` values. Files
//! ending in `.csv` are read as headerless comma-separated numbers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RGOFMAT\0";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8;

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("{}: {location}", path.display()),
        message: message.into(),
    }
}

pub fn save_matrix(path: impl AsRef<Path>, matrix: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(matrix.nrows() as u64).to_le_bytes())?;
    out.write_all(&(matrix.ncols() as u64).to_le_bytes())?;
    for v in matrix.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_u64(bytes: &[u8], offset: usize) -> u64 {
    u64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8 bytes"))
}

fn load_binary(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(path, format!("byte {}", bytes.len()), "truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(parse_err(path, "byte 0".into(), "not a matrix file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(parse_err(path, "byte 8".into(), format!("unsupported version {version}")));
    }
    let rows = read_u64(&bytes, 12) as usize;
    let cols = read_u64(&bytes, 20) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| parse_err(path, "byte 12".into(), "matrix size overflows"))?;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!("expected {expected} bytes for {rows} x {cols}, found {}", bytes.len()),
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("size checked"))
}

fn load_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(e.to_string()))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_err(
                    path,
                    format!("line {line}"),
                    format!("expected {c} columns, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(path, format!("line {line}, column {}", k + 1), format!("not a number: '{field}'"))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(path, "line 1".into(), "empty file"))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("rows have equal length"))
}

/// Loads a matrix with observations in rows.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let m = if is_csv { load_csv(path)? } else { load_binary(path)? };
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(parse_err(path, "byte 0".into(), "matrix has no entries"));
    }
    Ok(m)
}

/// Writes any serialisable result document as pretty JSON.
pub fn save_results<T: Serialize>(path: impl AsRef<Path>, results: &T) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, results).map_err(|e| Error::Io(e.to_string()))
}

/// One row of a figure CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    pub x: f64,
    pub method: String,
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

/// Writes figure rows with the header `x,method,value,ci_low,ci_high`.
pub fn write_figure_csv<W: Write>(out: W, rows: &[FigureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
