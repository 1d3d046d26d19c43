use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use convoy_core::metrics::{self, MetricsError, RunMetrics};
use convoy_core::net::RxStats;
use convoy_core::sim::{ScenarioConfig, Trace};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub scenario_path: String,
    pub scenario_name: String,
    /// SHA-256 of `scenario.resolved.toml`.
    pub scenario_sha256: String,
    pub seeds: Vec<u64>,
    pub per_levels: Vec<f64>,
    pub transport: String,
    pub out_dir: PathBuf,
    pub started_at_unix_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counters: Option<Counters>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Counters {
    pub sent: u64,
    pub offered: u64,
    pub accepted: u64,
    pub lost: u64,
    pub gate_rejected: u64,
    pub stale_rejected: u64,
    pub self_filtered: u64,
    pub malformed: u64,
    pub foreign: u64,
}

impl Counters {
    pub fn new(sent: u64, s: &RxStats) -> Self {
        Self {
            sent,
            offered: s.offered,
            accepted: s.accepted,
            lost: s.lost,
            gate_rejected: s.gate_rejected,
            stale_rejected: s.stale_rejected,
            self_filtered: s.self_filtered,
            malformed: s.malformed,
            foreign: s.foreign,
        }
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn now_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// `<root>/<scenario>/<per>/<seed>`.
pub fn run_dir(root: &Path, scenario: &str, per: f64, seed: u64) -> PathBuf {
    root.join(scenario)
        .join(format!("{per:.2}"))
        .join(seed.to_string())
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(CliError::io(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(CliError::io(path))
}

fn metrics_err(path: &Path) -> impl Fn(MetricsError) -> CliError + '_ {
    move |e| match e {
        MetricsError::Io(msg) => CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(msg),
        },
        e => CliError::Metrics(e),
    }
}

/// Writes `scenario.resolved.toml` and `manifest.json` into `dir`.
pub fn write_run_header(
    dir: &Path,
    config: &ScenarioConfig,
    manifest: &RunManifest,
) -> Result<(), CliError> {
    let toml_path = dir.join("scenario.resolved.toml");
    fs::write(&toml_path, config.to_toml_string()).map_err(CliError::io(&toml_path))?;
    write_manifest(dir, manifest)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    text.push('\n');
    fs::write(&path, text).map_err(CliError::io(&path))
}

pub fn write_trace(dir: &Path, trace: &Trace) -> Result<PathBuf, CliError> {
    let path = dir.join("trace.csv");
    write_file(&path, |w| Ok(trace.write_csv(w)?))?;
    Ok(path)
}

/// Per-run metric artefacts: error and speed-difference series plus scalars.
pub fn write_run_metrics(
    dir: &Path,
    trace: &Trace,
    desired_gap: f64,
    per: f64,
    seed: u64,
) -> Result<RunMetrics, CliError> {
    let errors = metrics::platooning_error(trace, desired_gap)?;
    let speed = metrics::speed_difference(trace)?;
    let m = metrics::run_metrics(trace, desired_gap, per, seed)?;
    let p = dir.join("platooning_error.csv");
    write_file(&p, |w| {
        metrics::write_series_csv(w, &errors).map_err(metrics_err(&p))
    })?;
    let p = dir.join("speed_difference.csv");
    write_file(&p, |w| {
        metrics::write_series_csv(w, std::slice::from_ref(&speed)).map_err(metrics_err(&p))
    })?;
    let p = dir.join("metrics.csv");
    write_file(&p, |w| {
        metrics::write_run_summary_csv(w, &m).map_err(metrics_err(&p))
    })?;
    Ok(m)
}

pub fn write_sweep_tables(dir: &Path, summary: &metrics::SweepSummary) -> Result<(), CliError> {
    let p = dir.join("summary.csv");
    write_file(&p, |w| {
        metrics::write_sweep_summary_csv(w, summary).map_err(metrics_err(&p))
    })?;
    let p = dir.join("runs.csv");
    write_file(&p, |w| {
        metrics::write_runs_csv(w, &summary.runs).map_err(metrics_err(&p))
    })?;
    Ok(())
}
