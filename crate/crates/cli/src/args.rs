use std::net::Ipv6Addr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "convoy",
    version,
    about = "Simulate a V2V convoy under packet loss and score it"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its trace.
    Run(RunArgs),
    /// Run every (PER, seed) pair and aggregate the metrics.
    Sweep(SweepArgs),
    /// Score an existing trace CSV.
    Metrics(MetricsArgs),
    /// Check a scenario file and the overrides without running it.
    Validate(ScenarioArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportArg {
    Virtual,
    Multicast,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario TOML file, or `paper-repro` for the bundled one.
    #[arg(long, default_value = "paper-repro")]
    pub scenario: String,
    /// Simulated duration override, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Desired gap override, metres.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Output root.
    #[arg(long, env = "OPENCONVOY_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Packet error rate applied at every receiver.
    #[arg(long)]
    pub per: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub transport: Option<TransportArg>,
    /// Vehicle this process drives (multicast only).
    #[arg(long)]
    pub vehicle: Option<u8>,
    /// Multicast group override.
    #[arg(long)]
    pub group: Option<Ipv6Addr>,
    /// Multicast port override.
    #[arg(long)]
    pub port: Option<u16>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated PER levels; defaults to the scenario's sweep list.
    #[arg(long)]
    pub per_list: Option<String>,
    /// Seeds per level, counted up from the scenario seed.
    #[arg(long)]
    pub seeds: Option<u32>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    /// Trace CSV to score.
    pub trace: PathBuf,
    /// Desired gap, metres; defaults to the one in scenario.resolved.toml
    /// next to the trace.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Where to write the metric CSVs; defaults to the trace's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
