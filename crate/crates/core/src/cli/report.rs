use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Suite;
use crate::error::{Error, Result};
use crate::io::write_csv;
use crate::landscape::LandscapeGrid;
use crate::netcore::NetworkParams;
use crate::ntk::{write_kernel_csv, NtkEquivalenceReport};
use crate::theoryprobes::{Check, ProbeReport};
use crate::training::ConvergenceTrace;

/// One asserted outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTrace {
    pub name: String,
    pub trace: ConvergenceTrace,
}

/// Landscape slice kept out of the JSON report; only its files are emitted.
#[derive(Debug, Clone)]
pub struct GridArtifact {
    pub grid: LandscapeGrid,
    pub center: NetworkParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<CheckRow>,
    pub probes: Vec<ProbeReport>,
    pub traces: Vec<NamedTrace>,
    pub equivalence: Option<NtkEquivalenceReport>,
    /// One tangent-kernel Gram matrix per output.
    pub kernels: Vec<Array2<f64>>,
    /// Suite-specific structured records.
    pub extras: BTreeMap<String, serde_json::Value>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub grid: Option<GridArtifact>,
}

impl SuiteReport {
    pub fn new(suite: Suite) -> Self {
        Self {
            suite,
            checks: Vec::new(),
            probes: Vec::new(),
            traces: Vec::new(),
            equivalence: None,
            kernels: Vec::new(),
            extras: BTreeMap::new(),
            notes: Vec::new(),
            grid: None,
        }
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(CheckRow {
            name: name.to_string(),
            pass,
            detail: detail.into(),
        });
    }

    /// Stores the probe; non-informational rules also become a check row.
    pub fn probe(&mut self, mut report: ProbeReport) {
        let base = report.name.clone();
        let mut k = 1;
        while self.probes.iter().any(|p| p.name == report.name) {
            k += 1;
            report.name = format!("{base}_{k}");
        }
        if report.check != Check::Informational {
            let detail = probe_detail(&report);
            self.check(&report.name, report.pass, detail);
        }
        self.probes.push(report);
    }

    pub fn trace(&mut self, name: &str, trace: ConvergenceTrace) {
        self.traces.push(NamedTrace {
            name: name.to_string(),
            trace,
        });
    }

    pub fn extra<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.extras.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn has_artifacts(&self) -> bool {
        !self.probes.is_empty()
            || !self.traces.is_empty()
            || self.equivalence.is_some()
            || !self.kernels.is_empty()
            || self.grid.is_some()
    }
}

fn probe_detail(r: &ProbeReport) -> String {
    let mut parts = Vec::new();
    if let Some(f) = r.fit {
        parts.push(format!("slope {:.4} r2 {:.4}", f.slope, f.r2));
    }
    for (k, v) in &r.metrics {
        parts.push(format!("{k} {v:.6}"));
    }
    parts.push(format!("{:?}", r.check));
    parts.join(", ")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub suite: Suite,
    pub config_hash: String,
    pub seed: u64,
    pub warnings: Vec<String>,
    pub suites: Vec<SuiteReport>,
    /// `suite/check` to pass flag.
    pub summary: BTreeMap<String, bool>,
    pub pass: bool,
    /// SHA-256 of this report serialized with an empty `hash`.
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl ExperimentReport {
    pub fn new(suite: Suite, config_hash: String, seed: u64, warnings: Vec<String>, suites: Vec<SuiteReport>) -> Result<Self> {
        let mut r = Self {
            suite,
            config_hash,
            seed,
            warnings,
            summary: BTreeMap::new(),
            pass: false,
            suites,
            hash: String::new(),
        };
        r.summary = r.recompute_summary();
        r.pass = r.summary.values().all(|p| *p);
        r.hash = r.compute_hash()?;
        Ok(r)
    }

    /// Summary rebuilt from the stored checks and probe series.
    pub fn recompute_summary(&self) -> BTreeMap<String, bool> {
        let mut out = BTreeMap::new();
        for s in &self.suites {
            for c in &s.checks {
                let pass = match s.probes.iter().find(|p| p.name == c.name) {
                    Some(p) => p.recompute_pass(),
                    None => c.pass,
                };
                out.insert(format!("{}/{}", s.suite, c.name), pass);
            }
        }
        out
    }

    pub fn compute_hash(&self) -> Result<String> {
        let mut blank = self.clone();
        blank.hash.clear();
        Ok(sha256_hex(serde_json::to_string(&blank)?.as_bytes()))
    }

    pub fn failures(&self) -> Vec<String> {
        self.summary.iter().filter(|(_, p)| !**p).map(|(k, _)| k.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Writes every CSV series, kernel and landscape grid of the report under `dir`.
/// Suites get their own subdirectory when the report holds more than one.
/// Returns the files written; an empty list means there was nothing to emit.
pub fn emit_plots_data(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let nested = report.suites.len() > 1;
    for s in report.suites.iter().filter(|s| s.has_artifacts()) {
        let base = if nested { dir.join(s.suite.name()) } else { dir.to_path_buf() };
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(&base)?;
        if !s.probes.is_empty() {
            let pd = base.join("probes");
            mkdir(&pd)?;
            for p in &s.probes {
                let path = pd.join(format!("{}.csv", p.name));
                p.write_csv(&path)?;
                files.push(path);
            }
        }
        if !s.traces.is_empty() {
            let td = base.join("traces");
            mkdir(&td)?;
            for t in &s.traces {
                let path = td.join(format!("{}.csv", t.name));
                write_csv(&path, &ConvergenceTrace::CSV_HEADER, &t.trace.csv_rows())?;
                files.push(path);
            }
        }
        if let Some(eq) = &s.equivalence {
            let path = base.join("equivalence.csv");
            eq.write_csv(&path)?;
            files.push(path);
        }
        if !s.kernels.is_empty() {
            let path = base.join("kernel.csv");
            write_kernel_csv(&path, &s.kernels)?;
            files.push(path);
        }
        if let Some(g) = &s.grid {
            g.grid.write(&base, &g.center)?;
            for f in ["grid.csv", "grid.json", "direction1.opl", "direction2.opl"] {
                files.push(base.join(f));
            }
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theoryprobes::SeriesPoint;

    fn point(v: f64) -> SeriesPoint {
        SeriesPoint {
            omega: None,
            layer: 1,
            value: v,
        }
    }

    fn sample() -> ExperimentReport {
        let mut s = SuiteReport::new(Suite::InitCheck);
        s.probe(ProbeReport::new("norms", vec![point(1.0), point(1.1)], Check::AtMost { threshold: 1.2 }));
        s.probe(ProbeReport::new("norms", vec![point(2.0)], Check::AtMost { threshold: 1.2 }));
        s.probe(ProbeReport::new("info", vec![point(2.0)], Check::Informational));
        s.check("extra", true, "ok");
        ExperimentReport::new(Suite::InitCheck, "abc".into(), 3, vec![], vec![s]).unwrap()
    }

    #[test]
    fn summary_and_hash() {
        let r = sample();
        assert_eq!(r.summary.len(), 3);
        assert!(!r.pass);
        assert_eq!(r.failures(), vec!["init-check/norms_2".to_string()]);
        assert_eq!(r.recompute_summary(), r.summary);
        assert_eq!(r.hash, r.compute_hash().unwrap());
        assert_eq!(r.hash.len(), 64);
        assert_eq!(sample().hash, r.hash);
        let back: ExperimentReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.compute_hash().unwrap(), r.hash);
    }

    #[test]
    fn emits_probe_csvs_and_nothing_for_empty() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plots_data(&sample(), dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let text = std::fs::read_to_string(dir.path().join("probes/norms.csv")).unwrap();
        assert!(text.starts_with("omega,layer,value\n"));
        let empty = ExperimentReport::new(Suite::Stability, "x".into(), 0, vec![], vec![SuiteReport::new(Suite::Stability)]).unwrap();
        let d2 = tempfile::tempdir().unwrap();
        assert!(emit_plots_data(&empty, d2.path()).unwrap().is_empty());
        assert_eq!(std::fs::read_dir(d2.path()).unwrap().count(), 0);
    }
}
