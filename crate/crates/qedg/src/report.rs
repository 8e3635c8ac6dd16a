//! Report emission: attack-trace CSV, metrics JSON, and a plot-ready
//! consistency-vs-queries CSV.
//!
//! Every emitted byte is a deterministic function of the inputs: floats
//! are printed with Rust's shortest round-trip formatting and rows follow
//! input order, so re-emitting the same run reproduces identical files.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::MetricsReport;
use crate::extraction::AttackTrace;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ReportError>;

/// Trace CSV column set, schema v1; the header row doubles as the version
/// marker (any column change is a schema change).
pub const TRACE_CSV_HEADER: &str =
    "epoch,q,L_clf,L_harm,L_div,L_G,L_S,disputed_fraction,probe_consistency";

pub const CONSISTENCY_CSV_HEADER: &str = "q,consistency";

/// Renders the per-epoch trace; one row per record, empty-string cell for
/// a missing probe consistency.
pub fn trace_csv(trace: &AttackTrace) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for r in &trace.records {
        let probe = r
            .probe_consistency
            .map(|c| c.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.q,
            r.l_clf,
            r.l_harmony,
            r.l_diversity,
            r.l_generator,
            r.l_substitute,
            r.disputed_fraction,
            probe
        ));
    }
    out
}

/// Renders the consistency-vs-queries curve, skipping epochs without a
/// probe snapshot.
pub fn consistency_csv(trace: &AttackTrace) -> String {
    let mut out = String::from(CONSISTENCY_CSV_HEADER);
    out.push('\n');
    for r in &trace.records {
        if let Some(c) = r.probe_consistency {
            out.push_str(&format!("{},{}\n", r.q, c));
        }
    }
    out
}

/// Paths of the three emitted artifacts.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub trace_csv: PathBuf,
    pub metrics_json: PathBuf,
    pub consistency_csv: PathBuf,
}

fn write(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `trace.csv`, `metrics.json`, and `consistency_vs_q.csv` under
/// `dir` (created if needed). Re-emission of the same run is
/// byte-identical.
pub fn emit_report(trace: &AttackTrace, metrics: &MetricsReport, dir: &Path) -> Result<ReportPaths> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let paths = ReportPaths {
        trace_csv: dir.join("trace.csv"),
        metrics_json: dir.join("metrics.json"),
        consistency_csv: dir.join("consistency_vs_q.csv"),
    };
    write(&paths.trace_csv, &trace_csv(trace))?;
    let mut json = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    json.push('\n');
    write(&paths.metrics_json, &json)?;
    write(&paths.consistency_csv, &consistency_csv(trace))?;
    Ok(paths)
}
