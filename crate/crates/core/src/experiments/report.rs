//! Study reports: one CSV row per statistic plus a JSON summary.

use std::fmt::Write as _;

use serde_json::json;

use crate::stats::Estimate;

pub const VERSION: &str = concat!("sip-core-", env!("CARGO_PKG_VERSION"));

/// How a row's pass flag is decided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Contract {
    /// `|estimate − target| ≤ tolerance`.
    Within { target: f64, tolerance: f64 },
    /// `estimate ≥ target`.
    AtLeast { target: f64 },
    /// `estimate > tolerance`; used for differences that must be significantly positive.
    Exceeds { tolerance: f64 },
    /// A precomputed verdict, e.g. a monotonicity scan over several rows.
    Verdict { target: f64, tolerance: f64, pass: bool },
    /// Reported, not asserted.
    Info,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub statistic: String,
    pub estimate: f64,
    pub stderr: f64,
    pub contract: Contract,
}

impl Row {
    pub fn pass(&self) -> Option<bool> {
        let e = self.estimate;
        match self.contract {
            Contract::Within { target, tolerance } => Some((e - target).abs() <= tolerance),
            Contract::AtLeast { target } => Some(e >= target),
            Contract::Exceeds { tolerance } => Some(e > tolerance),
            Contract::Verdict { pass, .. } => Some(pass),
            Contract::Info => None,
        }
    }

    fn target(&self) -> Option<f64> {
        match self.contract {
            Contract::Within { target, .. } | Contract::AtLeast { target } | Contract::Verdict { target, .. } => {
                Some(target)
            }
            Contract::Exceeds { .. } => Some(0.0),
            Contract::Info => None,
        }
    }

    fn tolerance(&self) -> Option<f64> {
        match self.contract {
            Contract::Within { tolerance, .. }
            | Contract::Exceeds { tolerance }
            | Contract::Verdict { tolerance, .. } => Some(tolerance),
            Contract::AtLeast { .. } => Some(0.0),
            Contract::Info => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub study: String,
    pub seed: u64,
    pub wall_ms: u128,
    pub rows: Vec<Row>,
}

impl Report {
    pub fn new(study: impl Into<String>, seed: u64) -> Self {
        Self {
            study: study.into(),
            seed,
            wall_ms: 0,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, statistic: impl Into<String>, estimate: f64, stderr: f64, contract: Contract) {
        self.rows.push(Row {
            statistic: statistic.into(),
            estimate,
            stderr,
            contract,
        });
    }

    /// Row checked at `max(k σ, floor)` around `target`.
    pub fn push_band(&mut self, statistic: impl Into<String>, est: Estimate, target: f64, k: f64, floor: f64) {
        let tolerance = (k * est.stderr).max(floor);
        self.push(statistic, est.mean, est.stderr, Contract::Within { target, tolerance });
    }

    pub fn push_info(&mut self, statistic: impl Into<String>, est: Estimate) {
        self.push(statistic, est.mean, est.stderr, Contract::Info);
    }

    pub fn row(&self, statistic: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.statistic == statistic)
    }

    /// True iff every asserted row passes.
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass() != Some(false))
    }

    pub fn failures(&self) -> Vec<&Row> {
        self.rows.iter().filter(|r| r.pass() == Some(false)).collect()
    }

    pub fn to_csv(&self) -> String {
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from("study,statistic,estimate,stderr,target,tolerance,pass\n");
        for r in &self.rows {
            let pass = r.pass().map_or_else(|| "NA".to_string(), |p| p.to_string());
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.study,
                r.statistic,
                r.estimate,
                r.stderr,
                na(r.target()),
                na(r.tolerance()),
                pass
            )
            .unwrap();
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let value = json!({
            "study": self.study,
            "seed": self.seed,
            "version": VERSION,
            "wall_ms": self.wall_ms as u64,
            "pass": self.pass(),
        });
        serde_json::to_string_pretty(&value).unwrap() + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contracts() {
        let mut r = Report::new("demo", 7);
        r.push_band("a", Estimate { mean: 1.01, stderr: 0.001 }, 1.0, 3.0, 0.02);
        r.push("b", 0.995, 0.0, Contract::AtLeast { target: 0.99 });
        r.push("c", 0.1, 0.02, Contract::Exceeds { tolerance: 0.06 });
        r.push_info("d", Estimate::exact(3.0));
        assert!(r.pass());
        r.push_band("e", Estimate { mean: 1.1, stderr: 0.01 }, 1.0, 3.0, 0.0);
        assert!(!r.pass());
        assert_eq!(r.failures().len(), 1);
    }

    #[test]
    fn csv_layout() {
        let mut r = Report::new("demo", 7);
        r.push_band("x", Estimate { mean: 0.5, stderr: 0.25 }, 0.5, 3.0, 0.0);
        r.push_info("y", Estimate::exact(2.0));
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "study,statistic,estimate,stderr,target,tolerance,pass");
        assert_eq!(lines[1], "demo,x,0.5,0.25,0.5,0.75,true");
        assert_eq!(lines[2], "demo,y,2,0,NA,NA,NA");
    }

    #[test]
    fn json_summary_fields() {
        let mut r = Report::new("demo", 9);
        r.wall_ms = 12;
        let v: serde_json::Value = serde_json::from_str(&r.summary_json()).unwrap();
        assert_eq!(v["study"], "demo");
        assert_eq!(v["seed"], 9);
        assert_eq!(v["wall_ms"], 12);
        assert_eq!(v["pass"], true);
        assert!(v["version"].as_str().unwrap().starts_with("sip-core-"));
    }
}
