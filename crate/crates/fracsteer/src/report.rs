use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricTable {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub command: String,
    pub seed: u64,
    /// Canonical form of the configuration that produced the run.
    pub config: String,
    pub checks: Vec<Check>,
    pub tables: Vec<MetricTable>,
    /// Informational lines that are not pass/fail.
    pub notes: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        Self {
            command: command.into(),
            seed,
            config,
            checks: Vec::new(),
            tables: Vec::new(),
            notes: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    /// Records a check. Names are unique within a report.
    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        let name = name.into();
        assert!(
            self.checks.iter().all(|c| c.name != name),
            "check `{name}` recorded twice"
        );
        self.checks.push(Check {
            name,
            passed,
            detail: detail.into(),
        });
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "fracsteer {} (seed {})", self.command, self.seed).unwrap();
        for n in &self.notes {
            writeln!(s, "  {n}").unwrap();
        }
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(s, "{tag} {}: {}", c.name, c.detail).unwrap();
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        writeln!(
            s,
            "{passed}/{} checks passed in {:.2} s",
            self.checks.len(),
            self.wall_clock_seconds
        )
        .unwrap();
        s
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}
