//! Headerless numeric CSV, one matrix row per line. Blank lines are skipped.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("line {line}"),
        message: message.into(),
    }
}

pub fn read_csv_str(text: &str) -> Result<FeatureMatrix> {
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(parse_err(line, format!("expected {c} fields, got {}", fields.len())));
            }
            _ => {}
        }
        for (j, field) in fields.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("field {} is not a number: {field:?}", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("field {} is not finite", j + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(1, "no data rows"))?;
    FeatureMatrix::new(rows, cols, data)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    read_csv_str(&fs::read_to_string(path)?)
}

/// Writes rows with shortest round-trip formatting.
pub fn write_csv(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let mut out = String::new();
    for row in m.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
