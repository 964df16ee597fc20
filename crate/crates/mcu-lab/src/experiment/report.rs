//! CSV metric tables and the JSON barrier report.

use super::config::ExperimentConfig;
use super::runner::{CurveEvaluation, EndpointSummary, ARTIFACT_VERSION};
use crate::error::{Error, Result};
use crate::eval::BarrierReport;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const CSV_HEADER: &str =
    "t,kind,loss_retain,loss_forget,acc_test,acc_forget,acc_retain,zrf,forget_quality";

/// One CSV per replicate: `metrics.csv` for the primary run,
/// `metrics-r{k}.csv` for the others. Rows are kind-major in config order.
pub fn write_metrics_csv(
    primary_path: &Path,
    cfg: &ExperimentConfig,
    evaluations: &[CurveEvaluation],
) -> Result<()> {
    for replicate in 0..cfg.replicates {
        let path = if replicate == 0 {
            primary_path.to_path_buf()
        } else {
            let stem = primary_path.with_extension("");
            primary_path.with_file_name(format!(
                "{}-r{replicate}.csv",
                stem.file_name().unwrap_or_default().to_string_lossy()
            ))
        };
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for &kind in &cfg.curve_kinds {
            for ev in evaluations
                .iter()
                .filter(|e| e.kind == kind && e.replicate == replicate)
            {
                for r in &ev.records {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        r.t,
                        kind.name(),
                        r.loss_retain,
                        r.loss_forget,
                        r.acc_test,
                        r.acc_forget,
                        r.acc_retain,
                        r.zrf,
                        r.forget_quality
                    );
                }
            }
        }
        std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveJson<'a> {
    kind: &'a str,
    replicate: usize,
    barrier: &'a BarrierReport,
    mc_standard_barrier: f64,
    forget_quality_min: f64,
    forget_quality_acceptable_everywhere: bool,
    records: &'a [crate::eval::MetricRecord],
}

#[derive(Serialize)]
struct AggregateJson {
    kind: String,
    metric: String,
    mean: f64,
    min: f64,
    max: f64,
    replicates: usize,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    artifact_version: &'a str,
    config_hash: String,
    setting: &'a str,
    n_points: usize,
    tau: f64,
    forget_quality_threshold: f64,
    curves: Vec<CurveJson<'a>>,
    aggregates: Vec<AggregateJson>,
    endpoints: &'a [EndpointSummary],
    provenance: &'a BTreeMap<String, String>,
    config_text: String,
}

/// The JSON document with barrier reports, per-replicate aggregates, the
/// config echo, and checkpoint provenance hashes.
pub fn write_report_json(
    path: &Path,
    cfg: &ExperimentConfig,
    evaluations: &[CurveEvaluation],
    endpoints: &[EndpointSummary],
    provenance: &BTreeMap<String, String>,
) -> Result<()> {
    let curves: Vec<CurveJson> = evaluations
        .iter()
        .map(|e| {
            let fq_min = e
                .records
                .iter()
                .map(|r| r.forget_quality)
                .fold(f64::INFINITY, f64::min);
            CurveJson {
                kind: e.kind.name(),
                replicate: e.replicate,
                barrier: &e.barrier,
                mc_standard_barrier: e.mc_standard_barrier,
                forget_quality_min: fq_min,
                forget_quality_acceptable_everywhere: fq_min >= cfg.forget_quality_threshold,
                records: &e.records,
            }
        })
        .collect();

    let mut aggregates = Vec::new();
    for &kind in &cfg.curve_kinds {
        for (metric, pick) in [
            (
                "retain_barrier_height",
                Box::new(|e: &CurveEvaluation| e.barrier.retain_barrier_height)
                    as Box<dyn Fn(&CurveEvaluation) -> f64>,
            ),
            (
                "forget_cliff_depth",
                Box::new(|e: &CurveEvaluation| e.barrier.forget_cliff_depth),
            ),
        ] {
            let vals: Vec<f64> = evaluations
                .iter()
                .filter(|e| e.kind == kind)
                .map(|e| pick(e))
                .collect();
            if vals.is_empty() {
                continue;
            }
            aggregates.push(AggregateJson {
                kind: kind.name().to_string(),
                metric: metric.to_string(),
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                replicates: vals.len(),
            });
        }
    }

    let report = ReportJson {
        artifact_version: ARTIFACT_VERSION,
        config_hash: cfg.config_hash(),
        setting: cfg.setting.name(),
        n_points: cfg.n_points,
        tau: cfg.tau,
        forget_quality_threshold: cfg.forget_quality_threshold,
        curves,
        aggregates,
        endpoints,
        provenance,
        config_text: cfg.provenance_text(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}
