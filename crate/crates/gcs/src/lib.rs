//! Ground-control runtime for the jetstack flight stack: scenario files, the
//! multi-rate flight loop, telemetry protocol, flight logs and the TCP
//! telemetry service.

use std::path::Path;

pub mod config;
pub mod log;
pub mod protocol;
pub mod runtime;
pub mod server;

pub use config::{ConfigError, Scenario, ScenarioConfig};
pub use protocol::{CommandKind, OperatorCommand, TelemetryFrame};
pub use runtime::{ExitReport, Runtime};

use crate::log::{FlightLogWriter, LogHeader};

#[derive(Debug, thiserror::Error)]
pub enum GcsError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime: {0}")]
    Core(#[from] jetstack_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: ExitReport,
    /// Frames written to the log.
    pub log_records: u64,
    /// Set when a write failed and logging stopped early.
    pub log_error: Option<String>,
}

/// Runs a scenario headless on the simulated clock, optionally writing a
/// flight log.
pub fn run_scenario(scenario: Scenario, log_path: Option<&Path>) -> Result<RunOutcome, GcsError> {
    let header = LogHeader::new(&scenario.config);
    let mut rt = Runtime::new(scenario)?;
    let mut log = match log_path {
        Some(p) => Some(FlightLogWriter::create(p, &header).map_err(|source| GcsError::Io { path: p.display().to_string(), source })?),
        None => None,
    };
    while !rt.finished() {
        let f = rt.tick();
        if let Some(log) = log.as_mut() {
            log.write_frame(&f);
            rt.set_logging_disabled(log.disabled());
        }
    }
    let report = rt.report();
    let (log_records, log_error) = match log.as_mut() {
        Some(l) => {
            l.finish();
            (l.records(), l.error().map(String::from))
        }
        None => (0, None),
    };
    Ok(RunOutcome { report, log_records, log_error })
}
