use std::io;
use std::path::PathBuf;

use convoy_core::metrics::MetricsError;
use convoy_core::sim::{ScenarioError, SimError, TraceError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ScenarioError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Net(SimError),
    #[error("{0}")]
    Sim(SimError),
    #[error("per {per:.2}, seed {seed}: {source}")]
    Cell {
        per: f64,
        seed: u64,
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Config(_) => "E_CONFIG",
            CliError::Io { .. } => "E_IO",
            CliError::Trace(TraceError::Empty) | CliError::Metrics(MetricsError::EmptyInput) => {
                "E_EMPTY"
            }
            CliError::Trace(_) => "E_TRACE",
            CliError::Metrics(MetricsError::IncompleteSweep(_)) => "E_SWEEP",
            CliError::Metrics(_) => "E_METRICS",
            CliError::Net(_) => "E_NET",
            CliError::Sim(_) => "E_SIM",
            CliError::Cell { source, .. } => source.code(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Cell { source, .. } => source.exit_code(),
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn usage(flag: &str, reason: impl std::fmt::Display) -> CliError {
        CliError::Usage(format!("{flag}: {reason}"))
    }

    /// `error[CODE]: detail` on one line.
    pub fn render(&self) -> String {
        let detail = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.code(), detail.trim())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
            e @ SimError::Net(_) => CliError::Net(e),
            e => CliError::Sim(e),
        }
    }
}
