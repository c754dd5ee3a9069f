//! CSV and libsvm readers.
//!
//! Both readers keep row order and reject non-finite values, reporting the
//! 1-based line of the offending record.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Libsvm,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "libsvm" | "svmlight" => Ok(Format::Libsvm),
            other => Err(Error::config(format!("unknown data format {other:?}"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Libsvm => "libsvm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadOptions {
    /// CSV only: the first record is a header.
    pub header: bool,
    /// CSV only: the last column holds class labels.
    pub label_column: bool,
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format, opts: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Csv => parse_csv(file, path, opts),
        Format::Libsvm => parse_libsvm(BufReader::new(file), path),
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_value(path: &Path, line: usize, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {cell:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {cell:?}")));
    }
    Ok(v)
}

/// Reads comma-separated rows; `origin` is only used in error messages.
pub fn parse_csv<R: Read>(reader: R, origin: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(opts.header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(origin, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut cells: Vec<&str> = record.iter().collect();
        if opts.label_column {
            let label = cells
                .pop()
                .ok_or_else(|| parse_err(origin, line, "empty record"))?;
            labels.push(label.to_string());
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(parse_err(
                    origin,
                    line,
                    format!("expected {w} feature columns, found {}", cells.len()),
                ))
            }
            _ => {}
        }
        for cell in cells {
            values.push(parse_value(origin, line, cell)?);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| parse_err(origin, 0, "no data rows"))?;
    let features = Array2::from_shape_vec((rows, width), values)
        .map_err(|e| Error::validation(e.to_string()))?;
    Dataset::new(features, opts.label_column.then_some(labels))
}

/// Reads `label index:value ...` lines with 1-based feature indices. The
/// dimension is the largest index seen. Blank lines and `#` comments are
/// skipped.
pub fn parse_libsvm<R: BufRead>(reader: R, origin: &Path) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(PathBuf::from(origin), e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let label = fields.next().expect("non-empty line has a first field");
        let mut row = Vec::new();
        for field in fields {
            let (i, v) = field.split_once(':').ok_or_else(|| {
                parse_err(
                    origin,
                    lineno,
                    format!("expected index:value, got {field:?}"),
                )
            })?;
            let i: usize = i
                .parse()
                .map_err(|_| parse_err(origin, lineno, format!("bad feature index {i:?}")))?;
            if i == 0 {
                return Err(parse_err(origin, lineno, "feature indices start at 1"));
            }
            if row.last().is_some_and(|&(prev, _)| prev >= i) {
                return Err(parse_err(origin, lineno, "feature indices must increase"));
            }
            row.push((i, parse_value(origin, lineno, v)?));
            dim = dim.max(i);
        }
        labels.push(label.to_string());
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(origin, 0, "no data rows"));
    }
    if dim == 0 {
        return Err(parse_err(origin, 0, "no features"));
    }
    let mut features = Array2::zeros((rows.len(), dim));
    for (r, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            features[[r, i - 1]] = v;
        }
    }
    Dataset::new(features, Some(labels))
}
