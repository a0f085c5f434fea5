//! Result tables and metrics, and their on-disk form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, EXIT_NUMERICAL};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Num(v) => format!("{v:.16e}"),
            Value::Int(v) => v.to_string(),
            Value::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Int(v) => Some(*v as f64),
            Value::Text(_) => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub artifact: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(artifact: &str, header: Vec<String>) -> Self {
        Self {
            artifact: artifact.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(
            &self
                .header
                .iter()
                .map(|h| escape(h))
                .collect::<Vec<_>>()
                .join(","),
        );
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| escape(&v.render())).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

fn escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub experiment: String,
    pub command: String,
    pub metrics: BTreeMap<String, Value>,
    pub tables: Vec<Table>,
}

impl Outcome {
    pub fn new(experiment: &str, command: &str) -> Self {
        Self {
            experiment: experiment.into(),
            command: command.into(),
            metrics: BTreeMap::new(),
            tables: Vec::new(),
        }
    }

    pub fn put(&mut self, key: impl Into<String>, v: impl Into<Value>) {
        self.metrics.insert(key.into(), v.into());
    }

    /// Records `v` only when present.
    pub fn put_opt(&mut self, key: &str, v: Option<f64>) {
        if let Some(v) = v {
            self.put(key, v);
        }
    }

    pub fn num(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).and_then(Value::as_f64)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        match self.metrics.get(key) {
            Some(Value::Text(s)) => Some(s),
            _ => None,
        }
    }

    pub fn table(&self, artifact: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.artifact == artifact)
    }

    pub fn metrics_text(&self) -> Result<String, CliError> {
        let mut s = String::new();
        writeln!(s, "schema_version={SCHEMA_VERSION}").unwrap();
        writeln!(s, "experiment={}", self.experiment).unwrap();
        writeln!(s, "command={}", self.command).unwrap();
        writeln!(s, "crate_version={}", env!("CARGO_PKG_VERSION")).unwrap();
        for (k, v) in &self.metrics {
            if let Value::Num(x) = v {
                if !x.is_finite() {
                    return Err(CliError {
                        kind: "non_finite_metric",
                        code: EXIT_NUMERICAL,
                        reason: format!("metric {k} = {x}"),
                    });
                }
            }
            writeln!(s, "{k}={}", v.render()).unwrap();
        }
        Ok(s)
    }
}

/// Writes `<experiment>_<artifact>.csv` for every table plus
/// `<experiment>_metrics.txt`, returning the paths written.
pub fn emit(outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let metrics = outcome.metrics_text()?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    for t in &outcome.tables {
        let path = dir.join(format!("{}_{}.csv", outcome.experiment, t.artifact));
        fs::write(&path, t.to_csv()).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join(format!("{}_metrics.txt", outcome.experiment));
    fs::write(&path, metrics).map_err(|e| CliError::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new("weights", vec!["kernel".into(), "beta".into()]);
        t.rows
            .push(vec!["sigmoid(gamma=0.5,coef0=0)".into(), 0.25.into()]);
        assert_eq!(
            t.to_csv(),
            "kernel,beta\n\"sigmoid(gamma=0.5,coef0=0)\",2.5000000000000000e-1\n"
        );
    }

    #[test]
    fn full_precision_round_trip() {
        let v = 0.1 + 0.2;
        let s = Value::Num(v).render();
        assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn non_finite_metrics_are_refused() {
        let mut o = Outcome::new("e", "solve");
        o.put("x", f64::NAN);
        assert_eq!(o.metrics_text().unwrap_err().code, EXIT_NUMERICAL);
    }
}
