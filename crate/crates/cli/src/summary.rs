//! Aggregation of finished runs into Markdown and CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use tokenbound_core::bound::Metric;

use crate::certify::Certificate;

#[derive(Debug, Deserialize)]
struct ReportFile {
    command: String,
    certificate: Option<Certificate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub run: String,
    pub command: String,
    pub model_id: String,
    pub metric: Metric,
    pub complexity_bits: f64,
    pub empirical: f64,
    pub bound: f64,
    pub threshold: f64,
    pub non_vacuous: bool,
}

fn report_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            report_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "report.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// One row per certified metric found under `dir`.
pub fn collect(dir: &Path) -> Result<Vec<Row>> {
    let mut files = Vec::new();
    report_files(dir, &mut files)?;
    let mut rows = Vec::new();
    for path in files {
        let bytes = fs::read(&path)?;
        let report: ReportFile =
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        let Some(cert) = report.certificate else { continue };
        let run = path
            .parent()
            .and_then(|p| p.strip_prefix(dir).ok())
            .map(|p| p.display().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".into());
        for r in cert.all() {
            rows.push(Row {
                run: run.clone(),
                command: report.command.clone(),
                model_id: cert.model_id.clone(),
                metric: r.metric,
                complexity_bits: r.complexity_bits,
                empirical: r.empirical_term,
                bound: r.bound,
                threshold: r.vacuity_threshold,
                non_vacuous: r.non_vacuous,
            });
        }
    }
    Ok(rows)
}

/// BPD rows sorted by bound, then top-k rows sorted by k and bound.
pub fn sections(rows: &[Row]) -> (Vec<&Row>, Vec<&Row>) {
    let key = |r: &&Row| match r.metric {
        Metric::Bpd => 0,
        Metric::TopK(k) => k,
    };
    let by_bound = |a: &&Row, b: &&Row| {
        key(a)
            .cmp(&key(b))
            .then(a.bound.total_cmp(&b.bound))
            .then(a.run.cmp(&b.run))
    };
    let mut bpd: Vec<&Row> = rows.iter().filter(|r| r.metric == Metric::Bpd).collect();
    let mut topk: Vec<&Row> = rows.iter().filter(|r| r.metric != Metric::Bpd).collect();
    bpd.sort_by(by_bound);
    topk.sort_by(by_bound);
    (bpd, topk)
}

fn verdict(r: &Row) -> &'static str {
    if r.non_vacuous {
        "non-vacuous"
    } else {
        "vacuous"
    }
}

pub fn markdown(rows: &[Row]) -> String {
    let (bpd, topk) = sections(rows);
    let mut s = String::from("## Bits per dimension\n\n");
    s.push_str("| run | model | C (bits) | empirical | bound | threshold | verdict |\n");
    s.push_str("|---|---|---:|---:|---:|---:|---|\n");
    for r in bpd {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {} |",
            r.run,
            r.model_id,
            r.complexity_bits,
            r.empirical,
            r.bound,
            r.threshold,
            verdict(r)
        );
    }
    s.push_str("\n## Top-k error\n\n");
    s.push_str("| run | model | k | C (bits) | empirical | bound | threshold | verdict |\n");
    s.push_str("|---|---|---:|---:|---:|---:|---:|---|\n");
    for r in topk {
        let Metric::TopK(k) = r.metric else { continue };
        let _ = writeln!(
            s,
            "| {} | {} | {k} | {} | {:.2}% | {:.2}% | {:.2}% | {} |",
            r.run,
            r.model_id,
            r.complexity_bits,
            100.0 * r.empirical,
            100.0 * r.bound,
            100.0 * r.threshold,
            verdict(r)
        );
    }
    s
}

pub fn csv(rows: &[Row]) -> String {
    let (bpd, topk) = sections(rows);
    let mut s = String::from("run,command,model,metric,complexity_bits,empirical,bound,threshold,non_vacuous\n");
    for r in bpd.into_iter().chain(topk) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.run, r.command, r.model_id, r.metric, r.complexity_bits, r.empirical, r.bound, r.threshold, r.non_vacuous
        );
    }
    s
}
