//! Time-stamped simulation log with CSV output.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub values: Vec<f64>,
    pub labels: Vec<String>,
    pub solve_ms: f64,
}

/// Numeric columns come first, then text columns, then `solve_ms`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub numeric_columns: Vec<String>,
    pub label_columns: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new(numeric_columns: Vec<String>, label_columns: Vec<String>) -> Self {
        Self { numeric_columns, label_columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: TraceRow) {
        debug_assert_eq!(row.values.len(), self.numeric_columns.len());
        debug_assert_eq!(row.labels.len(), self.label_columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.numeric_columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[k]).collect())
    }

    pub fn columns_with_prefix(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        self.numeric_columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.starts_with(prefix))
            .map(|(k, c)| (c.clone(), self.rows.iter().map(|r| r.values[k]).collect()))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self
            .numeric_columns
            .iter()
            .chain(self.label_columns.iter())
            .map(String::as_str)
            .chain(std::iter::once("solve_ms"))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in &row.values {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{}", fmt_num(*v));
            }
            for l in &row.labels {
                out.push(',');
                out.push_str(l);
            }
            let _ = write!(out, ",{}", fmt_num(row.solve_ms));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// Twelve significant digits in scientific notation.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        // avoid "-0.00000000000e0"
        return format!("{:.11e}", 0.0);
    }
    format!("{v:.11e}")
}
