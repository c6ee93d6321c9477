//! CSV persistence for dense and masked matrices.
//!
//! Files are RFC-4180 with `.` as the decimal separator and no header row
//! unless one is requested. In a single-file masked CSV an empty cell marks a
//! missing entry; alternatively values and a 0/1 mask can live in two files.
//! Values are written in Rust's shortest round-trip form, so a write/read
//! cycle is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Mask, MaskedMatrix};
use crate::scalar::Scalar;

fn parse_cells<R: Read>(reader: R, header: bool) -> Result<(usize, usize, Vec<Option<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut cells = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if i == 0 {
            cols = record.len();
        }
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                cells.push(None);
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("cannot parse {field:?} at ({i}, {j}) as a number")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            cells.push(Some(v));
        }
        rows += 1;
    }
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyShape { rows, cols });
    }
    Ok((rows, cols, cells))
}

/// Reads a dense matrix; empty cells are rejected.
pub fn read_dense<T: Scalar, R: Read>(reader: R, header: bool) -> Result<DenseMatrix<T>> {
    let (rows, cols, cells) = parse_cells(reader, header)?;
    let mut data = Vec::with_capacity(cells.len());
    for (k, c) in cells.into_iter().enumerate() {
        match c {
            Some(v) => data.push(T::lit(v)),
            None => {
                return Err(Error::Parse(format!(
                    "missing value at ({}, {}) in a dense matrix",
                    k / cols,
                    k % cols
                )))
            }
        }
    }
    DenseMatrix::from_vec(rows, cols, data)
}

/// Reads a masked matrix whose missing cells are empty strings.
pub fn read_masked<T: Scalar, R: Read>(reader: R, header: bool) -> Result<MaskedMatrix<T>> {
    let (rows, cols, cells) = parse_cells(reader, header)?;
    let cells: Vec<Option<T>> = cells.into_iter().map(|c| c.map(T::lit)).collect();
    MaskedMatrix::from_options(rows, cols, &cells)
}

pub fn read_dense_file<T: Scalar>(path: impl AsRef<Path>, header: bool) -> Result<DenseMatrix<T>> {
    read_dense(File::open(path)?, header)
}

pub fn read_masked_file<T: Scalar>(path: impl AsRef<Path>, header: bool) -> Result<MaskedMatrix<T>> {
    read_masked(File::open(path)?, header)
}

/// Reads a value CSV and a 0/1 mask CSV of the same shape.
pub fn read_masked_pair<T: Scalar>(
    values: impl AsRef<Path>,
    mask: impl AsRef<Path>,
    header: bool,
) -> Result<MaskedMatrix<T>> {
    let values: DenseMatrix<T> = read_dense_file(values, header)?;
    let bits: DenseMatrix<f64> = read_dense_file(mask, header)?;
    bits.check_binary()?;
    let mask = Mask::from_vec(bits.rows(), bits.cols(), bits.as_slice().iter().map(|&b| b == 1.0).collect())?;
    MaskedMatrix::new(&values, &mask)
}

fn write_rows<W: Write>(writer: W, header: bool, cols: usize, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    if header {
        w.write_record((0..cols).map(|j| format!("c{j}")))?;
    }
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a dense matrix; with `header` a `c0,c1,...` row comes first.
pub fn write_dense<T: Scalar, W: Write>(writer: W, m: &DenseMatrix<T>, header: bool) -> Result<()> {
    write_rows(
        writer,
        header,
        m.cols(),
        (0..m.rows()).map(|i| m.row(i).iter().map(|v| v.to_string()).collect()),
    )
}

/// Writes a masked matrix with missing cells as empty strings.
pub fn write_masked<T: Scalar, W: Write>(writer: W, s: &MaskedMatrix<T>, header: bool) -> Result<()> {
    write_rows(
        writer,
        header,
        s.cols(),
        (0..s.rows()).map(|i| {
            (0..s.cols())
                .map(|j| s.get(i, j).map(|v| v.to_string()).unwrap_or_default())
                .collect()
        }),
    )
}

pub fn write_dense_file<T: Scalar>(path: impl AsRef<Path>, m: &DenseMatrix<T>, header: bool) -> Result<()> {
    write_dense(File::create(path)?, m, header)
}

pub fn write_masked_file<T: Scalar>(path: impl AsRef<Path>, s: &MaskedMatrix<T>, header: bool) -> Result<()> {
    write_masked(File::create(path)?, s, header)
}
