//! Command implementations.

use std::path::{Path, PathBuf};

use edgegame::oracle::run_oracle_suite;
use edgegame::sim::{run_simulation, RunReport, SimConfig, Strategy};
use edgegame::Error;

use crate::artifacts::{self, RunManifest};

/// Failures split by exit code: configuration problems (exit 1) and runtime
/// problems (exit 2).
pub enum CmdError {
    Config(String),
    Runtime(String),
}

fn classify(e: Error) -> CmdError {
    match e {
        // Problems the user fixes by editing the config or its datasets.
        Error::ConfigValidation(_)
        | Error::InvalidInput(_)
        | Error::DatasetIo { .. }
        | Error::DatasetRecord { .. } => CmdError::Config(e.to_string()),
        other => CmdError::Runtime(other.to_string()),
    }
}

/// Parse the config file, apply CLI overrides, and validate.
fn load_config(
    path: &Path,
    strategy: Option<&str>,
    seed: Option<u64>,
) -> Result<SimConfig, CmdError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CmdError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    let mut config: SimConfig = serde_json::from_str(&text).map_err(|e| {
        CmdError::Config(format!("config {} is not valid: {e}", path.display()))
    })?;
    if let Some(s) = strategy {
        config.strategy = s.parse().map_err(|e: Error| CmdError::Config(e.to_string()))?;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().map_err(classify)?;
    Ok(config)
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()
}

pub fn run(
    config_path: &Path,
    strategy: Option<&str>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CmdError> {
    let config = load_config(config_path, strategy, seed)?;
    let report = run_simulation(&config, &base_dir(config_path)).map_err(classify)?;

    std::fs::create_dir_all(out)
        .map_err(|e| CmdError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    artifacts::write_stages_csv(&out.join("stages.csv"), &report)
        .map_err(CmdError::Runtime)?;
    artifacts::write_report_json(&out.join("report.json"), &report).map_err(CmdError::Runtime)?;
    let manifest = RunManifest::new(config_path, &config, out);
    artifacts::write_manifest(&out.join("manifest.json"), &manifest).map_err(CmdError::Runtime)?;

    print_run_summary(&report);
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn print_run_summary(report: &RunReport) {
    println!(
        "strategy {} seed {} stages {}",
        report.strategy,
        report.seed,
        report.stages.len()
    );
    println!(
        "cumulative: latency/token {:.6} s, mem proxy {:.3e} B, util proxy {:.3e}, objective {:.6e}",
        report.cumulative.avg_latency_per_token_s,
        report.cumulative.gpu_mem_proxy_bytes,
        report.cumulative.gpu_util_proxy,
        report.cumulative.objective
    );
    println!(
        "detection totals: tp {} fp {} tn {} fn {} dropped {} answered {}",
        report.cumulative.tp,
        report.cumulative.fp,
        report.cumulative.tn,
        report.cumulative.fn_,
        report.cumulative.dropped,
        report.cumulative.answered
    );
}

/// Swept parameters and how a raw value token applies to a config.
fn apply_sweep_value(config: &mut SimConfig, param: &str, raw: &str) -> Result<(), CmdError> {
    match param {
        "players" => {
            let total: u32 = parse_num(param, raw)?;
            if total < config.malicious_players {
                return Err(CmdError::Config(format!(
                    "players value {total} is below the {} malicious players in the config",
                    config.malicious_players
                )));
            }
            config.benign_players = total - config.malicious_players;
        }
        "malicious_send_count" => {
            config.malicious_send_count = parse_num(param, raw)?;
        }
        "strategy" => {
            config.strategy =
                raw.parse::<Strategy>().map_err(|e| CmdError::Config(e.to_string()))?;
        }
        "tpr" => {
            config.detector_rates.tpr = parse_num(param, raw)?;
        }
        "u_cost" => {
            config.u_cost = Some(parse_num(param, raw)?);
        }
        other => {
            return Err(CmdError::Config(format!(
                "unknown sweep parameter {other:?}; expected players, malicious_send_count, \
                 strategy, tpr, or u_cost"
            )))
        }
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(param: &str, raw: &str) -> Result<T, CmdError> {
    raw.parse().map_err(|_| {
        CmdError::Config(format!("cannot parse {raw:?} as a value for {param}"))
    })
}

pub fn sweep(config_path: &Path, param: &str, values: &str, out: &Path) -> Result<(), CmdError> {
    let base_config = load_config(config_path, None, None)?;
    let dir = base_dir(config_path);
    let tokens: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if tokens.is_empty() {
        return Err(CmdError::Config("sweep needs at least one value".to_string()));
    }

    let mut runs: Vec<(String, RunReport)> = Vec::with_capacity(tokens.len());
    for token in tokens {
        let mut config = base_config.clone();
        apply_sweep_value(&mut config, param, token)?;
        config.validate().map_err(classify)?;
        let report = run_simulation(&config, &dir).map_err(classify)?;
        println!(
            "{param}={token}: cumulative objective {:.6e}, latency/token {:.6} s",
            report.cumulative.objective, report.cumulative.avg_latency_per_token_s
        );
        runs.push((token.to_string(), report));
    }

    std::fs::create_dir_all(out)
        .map_err(|e| CmdError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    artifacts::write_sweep_csv(&out.join("sweep.csv"), param, &runs).map_err(CmdError::Runtime)?;
    println!("sweep written to {}", out.join("sweep.csv").display());
    Ok(())
}

pub fn oracle(
    instances: usize,
    max_size: usize,
    seed: u64,
    inject_fault: bool,
) -> Result<(), CmdError> {
    let outcome = run_oracle_suite(instances, max_size, seed, inject_fault).map_err(classify)?;
    match outcome {
        Ok(report) => {
            println!(
                "oracle clean: {} instances ({} allocation, {} prediction, {} identity checks)",
                report.instances,
                report.allocation_checks,
                report.prediction_checks,
                report.identity_checks
            );
            Ok(())
        }
        Err(counterexample) => Err(CmdError::Config(format!("oracle failed\n{counterexample}"))),
    }
}
