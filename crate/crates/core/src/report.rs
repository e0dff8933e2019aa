//! Experiment reports: tables, claims with a verdict, CSV and text rendering.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Verdict of a single claim or of a whole experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    /// Recorded for context; never affects the overall verdict.
    ReportOnly,
    Inconclusive,
    Fail,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::ReportOnly => "report-only",
            Status::Inconclusive => "inconclusive",
            Status::Fail => "fail",
        }
    }

    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

/// One falsifiable statement with its estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Claim {
    pub name: String,
    pub statement: String,
    pub estimate: f64,
    /// Free-form confidence description, e.g. an interval.
    pub confidence: String,
    pub status: Status,
}

/// A table cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(if v { "true" } else { "false" }.into())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        match v {
            Some(x) => Cell::Num(x),
            None => Cell::Text(String::new()),
        }
    }
}

/// Shortest round-trip decimal (exponent form for very large or small magnitudes).
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:?}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            }
        }
    }
}

/// Named rectangular table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Numeric column by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[k] {
                    Cell::Num(v) => *v,
                    Cell::Int(v) => *v as f64,
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }
}

/// Outcome of one experiment run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    /// Key/value description of the effective configuration.
    pub parameters: Vec<(String, String)>,
    pub tables: Vec<Table>,
    pub claims: Vec<Claim>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, seed: u64) -> Self {
        ExperimentReport {
            experiment: experiment.into(),
            seed,
            parameters: Vec::new(),
            tables: Vec::new(),
            claims: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.push((key.into(), value.to_string()));
    }

    pub fn claim(&mut self, name: &str, statement: impl Into<String>, estimate: f64, confidence: impl Into<String>, status: Status) {
        self.claims.push(Claim {
            name: name.into(),
            statement: statement.into(),
            estimate,
            confidence: confidence.into(),
            status,
        });
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn find_claim(&self, name: &str) -> Option<&Claim> {
        self.claims.iter().find(|c| c.name == name)
    }

    /// Fail beats inconclusive beats pass; report-only claims are ignored.
    pub fn status(&self) -> Status {
        self.claims
            .iter()
            .map(|c| c.status)
            .filter(|s| *s != Status::ReportOnly)
            .max()
            .unwrap_or(Status::Pass)
    }

    /// Self-describing CSV of one table: `#` header lines, then the table.
    pub fn table_csv(&self, table: &Table) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# experiment={}", self.experiment);
        let _ = writeln!(out, "# table={}", table.name);
        let _ = writeln!(out, "# seed={}", self.seed);
        for (k, v) in &self.parameters {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(&table.to_csv());
        out
    }

    /// Claims as a CSV table.
    pub fn claims_csv(&self) -> String {
        let mut t = Table::new("claims", &["name", "statement", "estimate", "confidence", "status"]);
        for c in &self.claims {
            t.push(vec![
                c.name.clone().into(),
                c.statement.clone().into(),
                c.estimate.into(),
                c.confidence.clone().into(),
                c.status.as_str().into(),
            ]);
        }
        self.table_csv(&t)
    }

    /// Human-readable block: claim, estimate, confidence, verdict.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment: {}", self.experiment);
        let _ = writeln!(out, "seed: {}", self.seed);
        for (k, v) in &self.parameters {
            let _ = writeln!(out, "  {k} = {v}");
        }
        for c in &self.claims {
            let _ = writeln!(out, "[{}] {}", c.status.as_str(), c.name);
            let _ = writeln!(out, "    claim: {}", c.statement);
            let _ = writeln!(out, "    estimate: {}", fmt_f64(c.estimate));
            if !c.confidence.is_empty() {
                let _ = writeln!(out, "    confidence: {}", c.confidence);
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        let _ = writeln!(out, "status: {}", self.status().as_str());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_ordering() {
        let mut r = ExperimentReport::new("x", 1);
        assert_eq!(r.status(), Status::Pass);
        r.claim("a", "s", 1.0, "", Status::ReportOnly);
        assert_eq!(r.status(), Status::Pass);
        r.claim("b", "s", 1.0, "", Status::Inconclusive);
        assert_eq!(r.status(), Status::Inconclusive);
        r.claim("c", "s", 1.0, "", Status::Fail);
        assert_eq!(r.status(), Status::Fail);
    }

    #[test]
    fn csv_quoting_and_floats() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![0.1.into(), "x,y".into()]);
        t.push(vec![1e-300.into(), Cell::Int(-3)]);
        assert_eq!(t.to_csv(), "a,b\n0.1,\"x,y\"\n1e-300,-3\n");
        assert_eq!(t.column("a").unwrap(), vec![0.1, 1e-300]);
    }
}
