use std::fs;
use std::path::{Path, PathBuf};

use convoy_core::metrics;
use convoy_core::model::VehicleId;
use convoy_core::net::MulticastConfig;
use convoy_core::sim::{run_live, run_scenario, LiveOptions, ScenarioConfig, Trace, TransportKind};
use rayon::prelude::*;

use crate::args::{MetricsArgs, RunArgs, ScenarioArgs, SweepArgs, TransportArg};
use crate::error::CliError;
use crate::output::{self, Counters, RunManifest};

const BUNDLED: &str = "paper-repro";

pub struct Loaded {
    pub path: String,
    pub config: ScenarioConfig,
}

fn check_per(flag: &str, per: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&per) {
        Ok(per)
    } else {
        Err(CliError::usage(flag, format!("{per} outside [0, 1]")))
    }
}

fn check_name(name: &str) -> Result<(), CliError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(convoy_core::sim::ScenarioError::Invalid {
            line: None,
            field: "name".into(),
            reason: format!(
                "'{name}' must be non-empty and use only letters, digits, '-', '_' or '.'"
            ),
        }
        .into())
    }
}

/// Reads the scenario and applies the shared overrides.
pub fn load(args: &ScenarioArgs) -> Result<Loaded, CliError> {
    let (path, mut config) = if args.scenario == BUNDLED && !Path::new(BUNDLED).exists() {
        (format!("<bundled:{BUNDLED}>"), ScenarioConfig::bundled())
    } else {
        let path = PathBuf::from(&args.scenario);
        let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
        (args.scenario.clone(), ScenarioConfig::from_toml_str(&text)?)
    };
    if let Some(d) = args.duration {
        if !(d.is_finite() && d > 0.0) {
            return Err(CliError::usage("--duration", format!("{d} must be > 0")));
        }
        config.duration_s = d;
    }
    if let Some(g) = args.gap {
        if !(g.is_finite() && g > 0.0) {
            return Err(CliError::usage("--gap", format!("{g} must be > 0")));
        }
        config.convoy.desired_gap_m = g;
    }
    check_name(&config.name)?;
    config.validate()?;
    Ok(Loaded { path, config })
}

fn manifest(
    command: &'static str,
    loaded: &Loaded,
    seeds: Vec<u64>,
    per_levels: Vec<f64>,
    out_dir: &Path,
) -> RunManifest {
    RunManifest {
        tool: "convoy",
        version: env!("CARGO_PKG_VERSION"),
        command,
        scenario_path: loaded.path.clone(),
        scenario_name: loaded.config.name.clone(),
        scenario_sha256: output::sha256_hex(&loaded.config.to_toml_string()),
        seeds,
        per_levels,
        transport: match loaded.config.transport {
            TransportKind::Virtual => "virtual".into(),
            TransportKind::Multicast => "multicast".into(),
        },
        out_dir: out_dir.to_path_buf(),
        started_at_unix_ms: output::now_unix_ms(),
        vehicle: None,
        counters: None,
    }
}

pub fn validate(args: &ScenarioArgs) -> Result<String, CliError> {
    let loaded = load(args)?;
    let c = &loaded.config;
    Ok(format!(
        "ok {}: {} vehicles, {} ticks of {} s, sha256 {}",
        c.name,
        c.convoy.vehicle_count,
        c.ticks(),
        c.control_period_s,
        output::sha256_hex(&c.to_toml_string())
    ))
}

pub fn run(args: &RunArgs) -> Result<String, CliError> {
    let mut loaded = load(&args.scenario)?;
    let config = &mut loaded.config;
    if let Some(per) = args.per {
        config.set_uniform_per(check_per("--per", per)?);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    match args.transport {
        Some(TransportArg::Virtual) => config.transport = TransportKind::Virtual,
        Some(TransportArg::Multicast) => config.transport = TransportKind::Multicast,
        None => {}
    }
    if let Some(g) = args.group {
        if !g.is_multicast() {
            return Err(CliError::usage(
                "--group",
                format!("{g} is not a multicast address"),
            ));
        }
        config.network.group = g;
    }
    if let Some(p) = args.port {
        config.network.port = p;
    }
    config.validate()?;
    let config = config.clone();
    let per = config.loss.per;
    let mut dir = output::run_dir(&args.scenario.out, &config.name, per, config.seed);

    match config.transport {
        TransportKind::Virtual => {
            if args.vehicle.is_some() {
                return Err(CliError::usage(
                    "--vehicle",
                    "only meaningful with --transport multicast",
                ));
            }
            output::create_dir(&dir)?;
            let m = manifest("run", &loaded, vec![config.seed], vec![per], &dir);
            output::write_run_header(&dir, &config, &m)?;
            let trace = run_scenario(&config)?;
            let path = output::write_trace(&dir, &trace)?;
            output::write_run_metrics(&dir, &trace, config.convoy.desired_gap_m, per, config.seed)?;
            Ok(format!("wrote {}", path.display()))
        }
        TransportKind::Multicast => {
            let vehicle = args.vehicle.ok_or_else(|| {
                CliError::usage("--vehicle", "required with --transport multicast")
            })?;
            if vehicle as usize >= config.convoy.vehicle_count {
                return Err(CliError::usage(
                    "--vehicle",
                    format!(
                        "{vehicle} outside a convoy of {}",
                        config.convoy.vehicle_count
                    ),
                ));
            }
            dir = dir.join(format!("v{vehicle}"));
            output::create_dir(&dir)?;
            let mut m = manifest("run", &loaded, vec![config.seed], vec![per], &dir);
            m.vehicle = Some(vehicle);
            output::write_run_header(&dir, &config, &m)?;
            let options = LiveOptions {
                vehicle: VehicleId(vehicle),
                multicast: MulticastConfig {
                    group: config.network.group,
                    port: config.network.port,
                    interface: config.network.interface,
                },
            };
            let report = run_live(&config, &options)?;
            let path = output::write_trace(&dir, &report.trace)?;
            m.counters = Some(Counters::new(report.sent, &report.stats));
            output::write_manifest(&dir, &m)?;
            Ok(format!(
                "wrote {} (sent {}, accepted {}, lost {}, self-filtered {})",
                path.display(),
                report.sent,
                report.stats.accepted,
                report.stats.lost,
                report.stats.self_filtered
            ))
        }
    }
}

fn parse_per_list(text: &str) -> Result<Vec<f64>, CliError> {
    let items: Vec<&str> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(CliError::usage("--per-list", "empty list"));
    }
    let mut levels = Vec::with_capacity(items.len());
    for item in items {
        let per: f64 = item
            .parse()
            .map_err(|_| CliError::usage("--per-list", format!("'{item}' is not a number")))?;
        levels.push(check_per("--per-list", per)?);
    }
    Ok(levels)
}

pub fn sweep(args: &SweepArgs) -> Result<String, CliError> {
    let loaded = load(&args.scenario)?;
    let base = &loaded.config;
    let levels = match &args.per_list {
        Some(text) => parse_per_list(text)?,
        None => base.sweep.per_levels.clone(),
    };
    if levels.is_empty() {
        return Err(CliError::usage("--per-list", "empty list"));
    }
    for per in &levels {
        check_per("--per-list", *per)?;
    }
    let seed_count = args.seeds.unwrap_or(base.sweep.seeds);
    if seed_count == 0 {
        return Err(CliError::usage("--seeds", "must be >= 1"));
    }
    let seeds: Vec<u64> = (0..seed_count as u64)
        .map(|i| base.seed.wrapping_add(i))
        .collect();
    let root = args.scenario.out.join(&base.name);
    output::create_dir(&root)?;
    output::write_manifest(
        &root,
        &manifest("sweep", &loaded, seeds.clone(), levels.clone(), &root),
    )?;

    let cells: Vec<(f64, u64)> = levels
        .iter()
        .flat_map(|per| seeds.iter().map(move |seed| (*per, *seed)))
        .collect();
    let run_cell = |&(per, seed): &(f64, u64)| -> Result<metrics::RunMetrics, CliError> {
        let mut config = base.clone();
        config.seed = seed;
        config.set_uniform_per(per);
        let dir = output::run_dir(&args.scenario.out, &config.name, per, seed);
        output::create_dir(&dir)?;
        let cell = Loaded {
            path: loaded.path.clone(),
            config,
        };
        let m = manifest("sweep", &cell, vec![seed], vec![per], &dir);
        output::write_run_header(&dir, &cell.config, &m)?;
        let trace = run_scenario(&cell.config)?;
        output::write_trace(&dir, &trace)?;
        output::write_run_metrics(&dir, &trace, cell.config.convoy.desired_gap_m, per, seed)
    };
    let with_cell = |cell: &(f64, u64)| {
        run_cell(cell).map_err(|e| CliError::Cell {
            per: cell.0,
            seed: cell.1,
            source: Box::new(e),
        })
    };
    let runs: Vec<metrics::RunMetrics> = if args.jobs == 1 {
        cells.iter().map(with_cell).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| CliError::usage("--jobs", e))?;
        pool.install(|| cells.par_iter().map(with_cell).collect::<Result<_, _>>())?
    };
    let summary = metrics::aggregate_runs(runs, &levels)?;
    output::write_sweep_tables(&root, &summary)?;
    Ok(format!(
        "{} runs, {} levels; wrote {}",
        cells.len(),
        summary.levels.len(),
        root.join("summary.csv").display()
    ))
}

pub fn metrics_cmd(args: &MetricsArgs) -> Result<String, CliError> {
    let file = fs::File::open(&args.trace).map_err(CliError::io(&args.trace))?;
    let trace = Trace::read_csv(std::io::BufReader::new(file))?;
    let trace_dir = args
        .trace
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let gap = match args.gap {
        Some(g) if g.is_finite() && g > 0.0 => g,
        Some(g) => return Err(CliError::usage("--gap", format!("{g} must be > 0"))),
        None => {
            let resolved = trace_dir.join("scenario.resolved.toml");
            let text = fs::read_to_string(&resolved).map_err(|_| {
                CliError::usage(
                    "--gap",
                    format!("required: no {} to read it from", resolved.display()),
                )
            })?;
            ScenarioConfig::from_toml_str(&text)?.convoy.desired_gap_m
        }
    };
    let out = args.out.clone().unwrap_or(trace_dir);
    output::create_dir(&out)?;
    let m = output::write_run_metrics(&out, &trace, gap, f64::NAN, 0)?;
    let mut line = format!(
        "mean speed difference {:.4} m/s, p95 platooning error {:.4} m",
        m.mean_speed_difference, m.p95_platooning_error
    );
    for (id, v) in &m.follower_p95 {
        line.push_str(&format!(", {id} p95 {v:.4} m"));
    }
    Ok(line)
}
