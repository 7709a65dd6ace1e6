//! Deterministic CSV and JSON artifacts of verification runs.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Fixed-width scientific rendering used in every CSV cell.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.15e}")
    }
}

/// Optional value, empty when absent.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A CSV table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// File stem.
    pub name: String,
    /// Column names.
    pub header: Vec<String>,
    /// Rows, already rendered.
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Empty table.
    pub fn new(name: &str, header: &[&str]) -> Table {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row; panics on a column-count mismatch.
    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    /// CSV text with a header line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv: {e}")))
    }
}

/// A tolerance gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    /// Short name.
    pub name: String,
    /// Outcome.
    pub passed: bool,
    /// Informational gates warn instead of failing the run.
    pub informational: bool,
    /// Measured value.
    pub value: f64,
    /// Threshold it was compared with.
    pub threshold: f64,
    /// Free-form detail.
    pub detail: String,
}

impl Gate {
    /// Passes when `value ≤ threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Gate {
        Gate {
            name: name.into(),
            passed: value <= threshold,
            informational: false,
            value,
            threshold,
            detail: String::new(),
        }
    }

    /// Gate with an explicit outcome.
    pub fn check(name: &str, passed: bool, value: f64, threshold: f64) -> Gate {
        Gate {
            name: name.into(),
            passed,
            informational: false,
            value,
            threshold,
            detail: String::new(),
        }
    }

    /// Marks the gate informational.
    pub fn informational(mut self) -> Gate {
        self.informational = true;
        self
    }

    /// Attaches detail text.
    pub fn with_detail(mut self, d: impl Into<String>) -> Gate {
        self.detail = d.into();
        self
    }

    /// One-line summary.
    pub fn line(&self) -> String {
        let tag = match (self.passed, self.informational) {
            (true, _) => "PASS",
            (false, true) => "WARN",
            (false, false) => "FAIL",
        };
        let mut s = format!("{tag} {} value={} threshold={}", self.name, fmt_f64(self.value), fmt_f64(self.threshold));
        if !self.detail.is_empty() {
            s.push_str(" (");
            s.push_str(&self.detail);
            s.push(')');
        }
        s
    }
}

/// Output of one command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Command name.
    pub command: String,
    /// Example id.
    pub example: String,
    /// Seed used for sampled points.
    pub seed: u64,
    /// Gates in evaluation order.
    pub gates: Vec<Gate>,
    /// CSV tables.
    pub tables: Vec<Table>,
    /// Structured payload.
    pub data: serde_json::Value,
}

impl RunReport {
    /// Empty report.
    pub fn new(command: &str, example: &str, seed: u64) -> RunReport {
        RunReport {
            command: command.into(),
            example: example.into(),
            seed,
            gates: Vec::new(),
            tables: Vec::new(),
            data: serde_json::Value::Null,
        }
    }

    /// True when every non-informational gate passed.
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed || g.informational)
    }

    /// Table by name.
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Gate by name.
    pub fn gate(&self, name: &str) -> Option<&Gate> {
        self.gates.iter().find(|g| g.name == name)
    }

    /// Writes `<command>_<table>.csv` per table and `<command>.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::InvalidInput(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}_{}.csv", self.command, t.name)), t.to_csv()?).map_err(io)?;
        }
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(format!("json: {e}")))?;
        fs::write(dir.join(format!("{}.json", self.command)), json).map_err(io)
    }
}

/// Reads every `*.json` report in `dir` (sorted by file name) and returns a
/// summary table with one row per gate.
pub fn aggregate(dir: &Path) -> Result<(Table, bool)> {
    let io = |e: std::io::Error| Error::InvalidInput(format!("{}: {e}", dir.display()));
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut t = Table::new("summary", &["command", "example", "gate", "status", "value", "threshold"]);
    let mut ok = true;
    let mut found = false;
    for f in files {
        let text = fs::read_to_string(&f).map_err(io)?;
        let Ok(rep) = serde_json::from_str::<RunReport>(&text) else {
            continue;
        };
        if rep.command == "report" {
            continue;
        }
        found = true;
        ok &= rep.passed();
        for g in &rep.gates {
            let status = match (g.passed, g.informational) {
                (true, _) => "pass",
                (false, true) => "warn",
                (false, false) => "fail",
            };
            t.push(vec![
                rep.command.clone(),
                rep.example.clone(),
                g.name.clone(),
                status.into(),
                fmt_f64(g.value),
                fmt_f64(g.threshold),
            ]);
        }
    }
    if !found {
        return Err(Error::InvalidInput(format!("no reports in {}", dir.display())));
    }
    Ok((t, ok))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_rendering_is_fixed() {
        assert_eq!(fmt_f64(1.0), "1.000000000000000e0");
        assert_eq!(fmt_f64(-2.5e-12), "-2.500000000000000e-12");
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn csv_and_gates() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec!["p,q".into(), fmt_f64(0.5)]);
        assert_eq!(t.to_csv().unwrap(), "a,b\n\"p,q\",5.000000000000000e-1\n");
        let mut r = RunReport::new("cmd", "ex", 1);
        r.gates.push(Gate::at_most("g", 1.0, 2.0));
        r.gates.push(Gate::at_most("w", 3.0, 2.0).informational());
        assert!(r.passed());
        assert!(r.gates[1].line().starts_with("WARN"));
        r.gates.push(Gate::check("f", false, 0.0, 0.0));
        assert!(!r.passed());
    }

    #[test]
    fn write_and_aggregate() {
        let dir = std::env::temp_dir().join(format!("ruled-report-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let mut r = RunReport::new("cmd", "ex", 1);
        r.gates.push(Gate::at_most("g", 1.0, 2.0));
        r.tables.push(Table::new("t", &["a"]));
        r.write(&dir).unwrap();
        assert!(dir.join("cmd_t.csv").exists());
        let (t, ok) = aggregate(&dir).unwrap();
        assert!(ok);
        assert_eq!(t.rows.len(), 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
