//! CSV reading and writing for numeric tables.
//!
//! Format: UTF-8, comma-separated, one header row of column names, then rows
//! of 64-bit floats with '.' decimal separator. Floats are written with
//! Rust's shortest round-trip rendering, so a write/read cycle is lossless.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::{Error, Mat, Result};

/// A rectangular table of finite 64-bit floats with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub data: Mat,
}

impl CsvTable {
    pub fn new(columns: Vec<String>, data: Mat) -> Result<Self> {
        if columns.len() != data.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} column names for {} data columns",
                columns.len(),
                data.ncols()
            )));
        }
        if columns.iter().any(|c| c.contains(',') || c.contains('\n')) {
            return Err(Error::InvalidParameter(
                "column names must not contain commas or newlines".into(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("csv table values must be finite".into()));
        }
        Ok(Self { columns, data })
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    /// Index of a named column.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidParameter(format!("no column named '{name}'")))
    }
}

/// Parses a CSV table; every body cell must be a finite float.
pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::CsvParse { line: 1, msg: "empty file".into() })?;
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if columns.iter().any(|c| c.is_empty()) {
        return Err(Error::CsvParse { line: 1, msg: "empty column name".into() });
    }
    let ncols = columns.len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != ncols {
            return Err(Error::CsvParse {
                line: idx + 1,
                msg: format!("expected {ncols} cells, found {}", cells.len()),
            });
        }
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| Error::CsvParse {
                line: idx + 1,
                msg: format!("not a number: '{}'", cell.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::CsvParse { line: idx + 1, msg: "non-finite value".into() });
            }
            values.push(v);
        }
        nrows += 1;
    }
    let data = Mat::from_row_slice(nrows, ncols, &values);
    Ok(CsvTable { columns, data })
}

/// Writes a table with shortest round-trip float rendering and
/// newline-terminated rows.
pub fn write_csv(path: &Path, table: &CsvTable) -> Result<()> {
    let mut out = String::new();
    out.push_str(&table.columns.join(","));
    out.push('\n');
    for i in 0..table.data.nrows() {
        for j in 0..table.data.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", table.data[(i, j)]));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
