//! Artifact writers: stages.csv, sweep.csv, report.json, manifest.json.
//!
//! Column sets and order are fixed; every numeric cell must be finite.

use std::fmt::Write as _;
use std::path::Path;

use edgegame::sim::{RunReport, SimConfig, StageReport};
use serde::Serialize;

pub const STAGE_COLUMNS: &str = "stage,strategy,avg_latency_per_token_s,\
cum_avg_latency_per_token_s,gpu_mem_proxy_bytes,gpu_util_proxy,tp,fp,tn,fn,\
detected,dropped,answered,objective";

fn finite(name: &str, v: f64) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("csv cell {name} is not finite: {v}"))
    }
}

fn stage_row(stage: &StageReport) -> Result<String, String> {
    Ok(format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        stage.stage,
        stage.strategy,
        finite("avg_latency_per_token_s", stage.avg_latency_per_token_s)?,
        finite("cum_avg_latency_per_token_s", stage.cum_avg_latency_per_token_s)?,
        finite("gpu_mem_proxy_bytes", stage.gpu_mem_proxy_bytes)?,
        finite("gpu_util_proxy", stage.gpu_util_proxy)?,
        stage.tp,
        stage.fp,
        stage.tn,
        stage.fn_,
        stage.detected,
        stage.dropped,
        stage.answered,
        finite("objective", stage.objective)?,
    ))
}

pub fn write_stages_csv(path: &Path, report: &RunReport) -> Result<(), String> {
    let mut out = String::new();
    writeln!(out, "{STAGE_COLUMNS}").unwrap();
    for stage in &report.stages {
        writeln!(out, "{}", stage_row(stage)?).unwrap();
    }
    std::fs::write(path, out).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn write_sweep_csv(
    path: &Path,
    param: &str,
    runs: &[(String, RunReport)],
) -> Result<(), String> {
    let mut out = String::new();
    writeln!(out, "sweep_param,sweep_value,{STAGE_COLUMNS}").unwrap();
    for (value, report) in runs {
        for stage in &report.stages {
            writeln!(out, "{param},{value},{}", stage_row(stage)?).unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn write_report_json(path: &Path, report: &RunReport) -> Result<(), String> {
    std::fs::write(path, report.to_json_pretty())
        .map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// Provenance sidecar for one run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_path: String,
    pub config_digest: String,
    pub out_dir: String,
    pub timestamp_epoch_s: u64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(config_path: &Path, config: &SimConfig, out_dir: &Path) -> Self {
        let timestamp_epoch_s = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            config_path: config_path.display().to_string(),
            config_digest: config.digest(),
            out_dir: out_dir.display().to_string(),
            timestamp_epoch_s,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| format!("manifest serialization: {e}"))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}
