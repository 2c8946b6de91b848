//! Result tables and their CSV/JSON encodings.

use std::fs;
use std::path::Path;

use phasekit::config::OutputFormat;
use serde_json::{json, Value};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<String>> for Cell {
    fn from(v: Option<String>) -> Self {
        v.map_or(Cell::Empty, Cell::Text)
    }
}

/// Shortest representation that parses back to the same double.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(_) | Cell::Empty => Value::Null,
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// File stem, e.g. `orbit`.
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn file_name(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => format!("{}.csv", self.name),
            OutputFormat::Json => format!("{}.json", self.name),
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Output(format!("{}: {e}", self.name));
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(io)?;
        }
        w.into_inner().map_err(|e| CliError::Output(format!("{}: {e}", self.name)))
    }

    pub fn to_json(&self, stamp: &Value) -> Value {
        json!({
            "version": stamp["version"],
            "config_hash": stamp["config_hash"],
            "table": self.name,
            "columns": self.columns,
            "rows": self.rows.iter().map(|r| r.iter().map(Cell::json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }
}

/// Writes every table plus `run.json` into `dir`.
pub fn write_all(dir: &Path, tables: &[Table], meta: &Value, format: OutputFormat) -> Result<(), CliError> {
    let encoded = tables
        .iter()
        .map(|t| {
            let bytes = match format {
                OutputFormat::Csv => t.to_csv()?,
                OutputFormat::Json => pretty(&t.to_json(meta))?,
            };
            Ok((t.file_name(format), bytes))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let meta_bytes = pretty(meta)?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (name, bytes) in encoded.iter().chain(std::iter::once(&("run.json".to_string(), meta_bytes))) {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn pretty(v: &Value) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| CliError::Output(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.663286859323, -0.0, 1e22] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(format_f64(1.0), "1.0");
        assert_eq!(format_f64(f64::NAN), "NaN");
    }

    #[test]
    fn csv_quotes_when_needed() {
        let mut t = Table::new("t", ["a", "b"]);
        t.push(vec!["x,y".into(), Cell::Empty]);
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "a,b\r\n\"x,y\",\r\n");
    }
}
