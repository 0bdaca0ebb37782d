//! Result records and their plain-text plot data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sle_core::McEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub name: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl NamedEstimate {
    pub fn new(name: impl Into<String>, e: &McEstimate) -> Self {
        NamedEstimate {
            name: name.into(),
            mean: e.mean,
            stderr: e.stderr,
            n: e.n,
        }
    }

    pub fn value(name: impl Into<String>, v: f64) -> Self {
        NamedEstimate {
            name: name.into(),
            mean: v,
            stderr: 0.0,
            n: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Columnar data for plotting; `rows[i][j]` is column `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        DataTable {
            name: name.to_string(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub estimates: Vec<NamedEstimate>,
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<DataTable>,
    /// A budget ran out or a diagnostic flagged the result.
    pub partial: bool,
    pub notes: Vec<String>,
    pub wall_clock_s: f64,
}

impl ResultRecord {
    pub fn new(experiment: &str, config_hash: String, seed: u64) -> Self {
        ResultRecord {
            experiment: experiment.to_string(),
            config_hash,
            seed,
            estimates: Vec::new(),
            verdicts: Vec::new(),
            tables: Vec::new(),
            partial: false,
            notes: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn estimate(&mut self, name: impl Into<String>, e: &McEstimate) {
        self.estimates.push(NamedEstimate::new(name, e));
    }

    pub fn value(&mut self, name: impl Into<String>, v: f64) {
        self.estimates.push(NamedEstimate::value(name, v));
    }

    pub fn verdict(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.verdicts.push(Verdict {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn get(&self, name: &str) -> Option<&NamedEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    pub fn passed(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.passed)
    }

    /// Equal up to wall-clock time.
    pub fn same_numbers(&self, other: &ResultRecord) -> bool {
        let mut a = self.clone();
        a.wall_clock_s = other.wall_clock_s;
        a == *other
    }

    /// One line per verdict.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for v in &self.verdicts {
            let _ = writeln!(s, "{} {}/{}: {}", if v.passed { "PASS" } else { "FAIL" }, self.experiment, v.name, v.detail);
        }
        s
    }

    pub fn write_json(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.json", self.experiment));
        std::fs::write(&path, serde_json::to_string_pretty(self).expect("record serializes"))?;
        Ok(path)
    }
}

/// Writes every table of `record` as `<experiment>-<table>.csv` in `dir`.
pub fn emit_plotdata(record: &ResultRecord, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for t in &record.tables {
        let path = dir.join(format!("{}-{}.csv", record.experiment, t.name));
        std::fs::write(&path, t.to_csv())?;
        out.push(path);
    }
    Ok(out)
}
