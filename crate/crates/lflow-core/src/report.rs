//! Machine-readable run reports: one tabular CSV and one hierarchical
//! key-value summary per run. Report bytes are a pure function of the
//! config bytes and seed; wall-clock timings are only written when
//! explicitly requested, keeping the default output byte-stable.

use crate::error::Result;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

/// Direction of a check's comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    /// pass iff measured <= threshold
    Le,
    /// pass iff measured >= threshold
    Ge,
}

impl Cmp {
    fn symbol(self) -> &'static str {
        match self {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
        }
    }
}

/// One verified check.
#[derive(Clone, Debug)]
pub struct ReportRow {
    pub check: String,
    pub digest: String,
    pub measured: f64,
    pub cmp: Cmp,
    pub threshold: f64,
    pub pass: bool,
    pub runtime_ms: u128,
}

/// Ordered collection of rows plus run metadata.
#[derive(Clone, Debug)]
pub struct Report {
    pub suite: String,
    pub digest: String,
    rows: Vec<ReportRow>,
    notes: Vec<(String, String)>,
}

/// Twelve-hex-character digest of the run inputs.
pub fn inputs_digest(config_bytes: &str, seed: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_bytes.as_bytes());
    hasher.update(seed.to_le_bytes());
    let out = hasher.finalize();
    out.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

impl Report {
    pub fn new(suite: &str, digest: String) -> Self {
        Report {
            suite: suite.to_string(),
            digest,
            rows: vec![],
            notes: vec![],
        }
    }

    /// Records a check; pass is derived from the comparison.
    pub fn add(&mut self, check: &str, measured: f64, cmp: Cmp, threshold: f64, runtime_ms: u128) {
        let pass = match cmp {
            Cmp::Le => measured <= threshold,
            Cmp::Ge => measured >= threshold,
        };
        self.rows.push(ReportRow {
            check: check.to_string(),
            digest: self.digest.clone(),
            measured,
            cmp,
            threshold,
            pass,
            runtime_ms,
        });
    }

    /// Attaches a free-form summary entry (deterministic content only).
    pub fn note(&mut self, key: &str, value: String) {
        self.notes.push((key.to_string(), value));
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn csv(&self, timings: bool) -> String {
        let mut out = String::new();
        if timings {
            out.push_str("check,digest,measured,op,threshold,pass,runtime_ms\n");
        } else {
            out.push_str("check,digest,measured,op,threshold,pass\n");
        }
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{:.12e},{},{:.12e},{}",
                r.check,
                r.digest,
                r.measured,
                r.cmp.symbol(),
                r.threshold,
                r.pass
            );
            if timings {
                let _ = write!(out, ",{}", r.runtime_ms);
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self, timings: bool) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "suite: {}", self.suite);
        let _ = writeln!(out, "digest: {}", self.digest);
        let _ = writeln!(out, "checks: {}", self.rows.len());
        let _ = writeln!(
            out,
            "passed: {}",
            self.rows.iter().filter(|r| r.pass).count()
        );
        let _ = writeln!(out, "all_pass: {}", self.all_pass());
        if !self.notes.is_empty() {
            let _ = writeln!(out, "notes:");
            for (k, v) in &self.notes {
                let _ = writeln!(out, "  {k}: {v}");
            }
        }
        let _ = writeln!(out, "rows:");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "  {}:\n    measured: {:.12e}\n    threshold: {} {:.12e}\n    pass: {}",
                r.check,
                r.measured,
                r.cmp.symbol(),
                r.threshold,
                r.pass
            );
            if timings {
                let _ = writeln!(out, "    runtime_ms: {}", r.runtime_ms);
            }
        }
        out
    }

    pub fn write(&self, dir: &Path, timings: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.csv(timings))?;
        std::fs::write(dir.join("summary.txt"), self.summary(timings))?;
        Ok(())
    }
}
