//! CSV ingestion of return series and external weight files.
//!
//! Returns files have a header row `date,<asset>,...`, ISO-8601 dates in
//! strictly ascending order and one simple return per cell. Row and column
//! numbers in errors are 1-based file coordinates (the header is row 1).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::{ReturnsBlock, WeightVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsFile {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub returns: ReturnsBlock,
}

fn data_err(row: usize, col: usize, message: impl Into<String>) -> Error {
    Error::Data {
        row,
        col,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => data_err(
            row,
            (*len as usize + 1).min(*expected_len as usize),
            format!("expected {expected_len} cells, found {len}"),
        ),
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        _ => data_err(row, 0, e.to_string()),
    }
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let t = cell.trim();
    if t.is_empty() {
        return Err(data_err(row, col, "missing value"));
    }
    let v: f64 = t
        .parse()
        .map_err(|_| data_err(row, col, format!("not a number: '{t}'")))?;
    if !v.is_finite() {
        return Err(data_err(row, col, format!("non-finite value '{t}'")));
    }
    Ok(v)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input)
}

pub fn read_returns<R: Read>(input: R) -> Result<ReturnsFile> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.get(0).map(str::trim) != Some("date") {
        return Err(data_err(1, 1, "first column must be 'date'"));
    }
    let assets: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if assets.is_empty() {
        return Err(data_err(1, 2, "no asset columns"));
    }
    let p = assets.len();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map_or(dates.len() + 2, |pos| pos.line() as usize);
        let raw_date = record.get(0).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| data_err(row, 1, format!("invalid ISO-8601 date '{raw_date}'")))?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(data_err(row, 1, format!("date {date} is not after {prev}")));
            }
        }
        dates.push(date);
        for (j, cell) in record.iter().skip(1).enumerate() {
            values.push(parse_cell(cell, row, j + 2)?);
        }
    }
    if dates.is_empty() {
        return Err(data_err(2, 1, "no data rows"));
    }
    let n = dates.len();
    // Rows in the file are observations; the block stores assets × observations.
    let returns = ReturnsBlock::new(DMatrix::from_row_slice(n, p, &values).transpose())?;
    Ok(ReturnsFile {
        dates,
        assets,
        returns,
    })
}

pub fn read_returns_path(path: &Path) -> Result<ReturnsFile> {
    read_returns(File::open(path)?)
}

pub fn write_returns<W: Write>(file: &ReturnsFile, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut header = vec!["date".to_string()];
    header.extend(file.assets.iter().cloned());
    w.write_record(&header).map_err(io)?;
    let y = file.returns.values();
    for (t, date) in file.dates.iter().enumerate() {
        let mut rec = vec![date.format("%Y-%m-%d").to_string()];
        rec.extend(y.column(t).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one weight vector per row. The header names the assets; an optional
/// leading `period` column is ignored.
pub fn read_weights<R: Read>(input: R) -> Result<(Vec<String>, Vec<WeightVector>)> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let skip = usize::from(header.get(0).map(str::trim) == Some("period"));
    let assets: Vec<String> = header.iter().skip(skip).map(|s| s.trim().to_string()).collect();
    if assets.is_empty() {
        return Err(data_err(1, 1, "no asset columns"));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map_or(out.len() + 2, |pos| pos.line() as usize);
        let v = record
            .iter()
            .skip(skip)
            .enumerate()
            .map(|(j, cell)| parse_cell(cell, row, j + 1 + skip))
            .collect::<Result<Vec<f64>>>()?;
        let w = WeightVector::new(DVector::from_vec(v)).map_err(|e| data_err(row, 0, e.to_string()))?;
        out.push(w);
    }
    Ok((assets, out))
}

pub fn read_weights_path(path: &Path) -> Result<(Vec<String>, Vec<WeightVector>)> {
    read_weights(File::open(path)?)
}
