use std::path::Path;

use crate::error::{CliError, CliResult};

pub const MISSING: &str = "--";

/// A rectangular string table rendered as CSV or Markdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
        w.write_record(&self.header).map_err(|e| CliError::io(path, e))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::io(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
        // read back: every row must match the header width
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
        for rec in r.records() {
            let rec = rec.map_err(|_| CliError::Schema(path.to_path_buf()))?;
            if rec.len() != self.header.len() {
                return Err(CliError::Schema(path.to_path_buf()));
            }
        }
        Ok(())
    }

    pub fn markdown(&self) -> String {
        let mut s = format!("| {} |\n", self.header.join(" | "));
        s.push_str(&format!("|{}\n", "---|".repeat(self.header.len())));
        for r in &self.rows {
            s.push_str(&format!("| {} |\n", r.join(" | ")));
        }
        s
    }
}

/// Percentage with one decimal, or the missing marker.
pub fn pct(v: Option<f64>) -> String {
    num(v.map(|x| 100.0 * x), 1)
}

/// Fixed decimals; values that round to zero print without a sign.
pub fn num(v: Option<f64>, digits: usize) -> String {
    let Some(x) = v.filter(|x| x.is_finite()) else {
        return MISSING.to_string();
    };
    let s = format!("{x:.digits$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(MISSING.to_string(), |x| x.to_string())
}
