//! `report.json` and the human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use d3m_core::eval::{RunReport, SweepPoint};

use crate::error::{CliError, IoContext, Result};
use crate::formats::{json_offset, write_atomic};
use crate::manifest::{RunManifest, StageStatus};

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub group: String,
    pub accuracy: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub wga: f64,
    pub balanced: f64,
    pub overall: f64,
    pub per_group: Vec<GroupMetric>,
}

impl Metrics {
    pub fn from_report(r: &RunReport) -> Metrics {
        let per_group = r
            .per_group
            .iter()
            .zip(&r.group_sizes)
            .enumerate()
            .map(|(g, (&accuracy, &size))| GroupMetric {
                group: r
                    .group_names
                    .as_ref()
                    .and_then(|n| n.get(g).cloned())
                    .unwrap_or_else(|| format!("g{g}")),
                accuracy,
                size,
            })
            .collect();
        Metrics {
            wga: r.worst_group_accuracy,
            balanced: r.balanced_accuracy,
            overall: r.overall_accuracy,
            per_group,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub count: usize,
    pub heuristic_k: Option<usize>,
    pub train_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverySummary {
    /// Per class, agreement of the pseudo bit with the true group split (up
    /// to relabelling); absent when the class does not have exactly two true
    /// groups.
    pub agreement: Vec<Option<f64>>,
    pub pseudo_group_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub best: Vec<SweepPoint>,
    pub heuristic: Option<SweepPoint>,
    pub balancing_k: Option<usize>,
}

/// Everything in `report.json`. Test-set metrics of the final model, with
/// the base (ERM) model alongside when a pipeline changed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: Metrics,
    pub baseline: Option<Metrics>,
    pub removal: Removal,
    pub stages: Vec<String>,
    pub discovery: Option<DiscoverySummary>,
    pub sweep: Option<SweepSummary>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_atomic(&run_dir.join(REPORT_FILE), self.to_json().as_bytes())
    }

    pub fn load(run_dir: &Path) -> Result<Report> {
        let path = run_dir.join(REPORT_FILE);
        let bytes = fs::read(&path).at(&path)?;
        let report: Report = serde_json::from_slice(&bytes).map_err(|e| CliError::Parse {
            path: path.clone(),
            offset: json_offset(&bytes, &e),
            message: e.to_string(),
        })?;
        if report.version != REPORT_VERSION {
            return Err(CliError::Version {
                path,
                found: report.version,
                expected: REPORT_VERSION,
            });
        }
        Ok(report)
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Per-group accuracy table plus removal and sweep details.
pub fn render(manifest: &RunManifest, report: Option<&Report>) -> String {
    let mut out = String::new();
    let mode = manifest.mode.as_deref().unwrap_or(&manifest.command);
    let _ = writeln!(out, "mode {mode}, seed {}, config {}", manifest.seed, &manifest.config_hash[..manifest.config_hash.len().min(12)]);
    let completed = manifest.completed();
    if completed.is_empty() {
        let _ = writeln!(out, "no stages completed");
    } else {
        let _ = writeln!(out, "stages: {}", completed.join(", "));
    }
    for s in manifest.stages.iter().filter(|s| s.status != StageStatus::Completed) {
        let status = if s.status == StageStatus::Failed { "failed" } else { "incomplete" };
        let _ = writeln!(out, "stage {} {status}: {}", s.name, s.error.as_deref().unwrap_or("no error recorded"));
    }
    let Some(r) = report else {
        return out;
    };

    let _ = writeln!(out);
    let width = r.metrics.per_group.iter().map(|g| g.group.len()).max().unwrap_or(5).max(18);
    match &r.baseline {
        Some(b) => {
            let _ = writeln!(out, "{:<width$} {:>6} {:>8} {:>8}", "group", "size", "erm", r.mode);
            for (g, e) in r.metrics.per_group.iter().zip(&b.per_group) {
                let _ = writeln!(out, "{:<width$} {:>6} {:>8} {:>8}", g.group, g.size, pct(e.accuracy), pct(g.accuracy));
            }
            for (name, a, e) in [
                ("worst-group", r.metrics.wga, b.wga),
                ("balanced", r.metrics.balanced, b.balanced),
                ("overall", r.metrics.overall, b.overall),
            ] {
                let _ = writeln!(out, "{:<width$} {:>6} {:>8} {:>8}", name, "", pct(e), pct(a));
            }
        }
        None => {
            let _ = writeln!(out, "{:<width$} {:>6} {:>8}", "group", "size", r.mode);
            for g in &r.metrics.per_group {
                let _ = writeln!(out, "{:<width$} {:>6} {:>8}", g.group, g.size, pct(g.accuracy));
            }
            for (name, a) in [("worst-group", r.metrics.wga), ("balanced", r.metrics.balanced), ("overall", r.metrics.overall)] {
                let _ = writeln!(out, "{:<width$} {:>6} {:>8}", name, "", pct(a));
            }
        }
    }
    let _ = writeln!(out);
    let _ = write!(out, "removed {} of {} training examples", r.removal.count, r.removal.train_size);
    match r.removal.heuristic_k {
        Some(k) => {
            let _ = writeln!(out, "; negative-score count {k}");
        }
        None => {
            let _ = writeln!(out);
        }
    }
    if let Some(d) = &r.discovery {
        let agreement: Vec<String> = d.agreement.iter().map(|a| a.map_or_else(|| "n/a".into(), pct)).collect();
        let _ = writeln!(out, "pseudo-group sizes {:?}, agreement with true groups per class: {}", d.pseudo_group_sizes, agreement.join(", "));
    }
    if let Some(s) = &r.sweep {
        for p in &s.best {
            let _ = writeln!(out, "best {} point: k = {}, wga {}", p.method.as_str(), p.k, pct(p.wga));
        }
        if let Some(h) = &s.heuristic {
            let _ = writeln!(out, "d3m at negative-score count: k = {}, wga {}", h.k, pct(h.wga));
        }
        if let Some(k) = s.balancing_k {
            let _ = writeln!(out, "balancing removes {k}");
        }
    }
    out
}
