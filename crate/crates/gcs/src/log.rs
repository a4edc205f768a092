//! Flight logs.
//!
//! A log is NDJSON: one [`LogHeader`] line, then one [`TelemetryFrame`] per
//! simulated millisecond. Floats are written with round-trip precision, so
//! re-serializing a replayed frame reproduces its line byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::protocol::{TelemetryFrame, TELEMETRY_SCHEMA};

pub const LOG_FORMAT: &str = "jetstack-flight-log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub schema: u32,
    pub scenario: ScenarioConfig,
}

impl LogHeader {
    pub fn new(scenario: &ScenarioConfig) -> Self {
        Self { format: LOG_FORMAT.into(), schema: TELEMETRY_SCHEMA, scenario: scenario.clone() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Append-only log writer. A failed write (disk full, closed pipe) disables
/// logging for the rest of the run instead of failing it.
pub struct FlightLogWriter {
    out: Option<BufWriter<Box<dyn Write + Send>>>,
    records: u64,
    error: Option<String>,
}

impl FlightLogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> std::io::Result<Self> {
        let file = File::create(path)?;
        Ok(Self::from_writer(Box::new(file), header))
    }

    pub fn from_writer(w: Box<dyn Write + Send>, header: &LogHeader) -> Self {
        let mut log = Self { out: Some(BufWriter::new(w)), records: 0, error: None };
        log.line(header);
        log
    }

    fn line<T: Serialize>(&mut self, value: &T) {
        let Some(out) = self.out.as_mut() else { return };
        let res = serde_json::to_writer(&mut *out, value).map_err(std::io::Error::from).and_then(|_| out.write_all(b"\n"));
        if let Err(e) = res {
            self.disable(e);
        }
    }

    fn disable(&mut self, e: std::io::Error) {
        self.error = Some(e.to_string());
        if let Some(out) = self.out.take() {
            // Drop the buffer without another flush attempt.
            let _ = out.into_parts();
        }
    }

    pub fn write_frame(&mut self, frame: &TelemetryFrame) {
        if self.out.is_some() {
            self.line(frame);
            if self.out.is_some() {
                self.records += 1;
            }
        }
    }

    pub fn disabled(&self) -> bool {
        self.out.is_none()
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    /// Frames handed to the writer while it was enabled.
    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(&mut self) {
        if let Some(out) = self.out.as_mut() {
            if let Err(e) = out.flush() {
                self.disable(e);
            }
        }
    }
}

/// Streams a log: the header, then frames in order.
pub struct FlightLogReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    pub header: LogHeader,
}

impl FlightLogReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, LogError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> FlightLogReader<R> {
    pub fn new(reader: R) -> Result<Self, LogError> {
        let mut lines = reader.lines();
        let first = lines.next().ok_or(LogError::Format { line: 1, message: "empty log".into() })??;
        let header: LogHeader = serde_json::from_str(&first).map_err(|e| LogError::Format { line: 1, message: e.to_string() })?;
        if header.format != LOG_FORMAT {
            return Err(LogError::Format { line: 1, message: format!("not a flight log: format {:?}", header.format) });
        }
        if header.schema != TELEMETRY_SCHEMA {
            return Err(LogError::Format { line: 1, message: format!("unsupported schema {}", header.schema) });
        }
        Ok(Self { lines, line: 1, header })
    }
}

impl<R: BufRead> Iterator for FlightLogReader<R> {
    type Item = Result<TelemetryFrame, LogError>;

    fn next(&mut self) -> Option<Self::Item> {
        let text = match self.lines.next()? {
            Ok(t) => t,
            Err(e) => return Some(Err(e.into())),
        };
        self.line += 1;
        let line = self.line;
        Some(serde_json::from_str(&text).map_err(|e| LogError::Format { line, message: e.to_string() }))
    }
}

pub fn read_log(path: &Path) -> Result<(LogHeader, Vec<TelemetryFrame>), LogError> {
    let mut r = FlightLogReader::open(path)?;
    let frames = r.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((r.header, frames))
}

/// Columns of the CSV export, in order. Angles in rad, thrust in N,
/// throttle in percent.
pub const CSV_HEADER: [&str; 38] = [
    "t",
    "phase",
    "alpha",
    "com_x",
    "com_y",
    "com_z",
    "com_ref_x",
    "com_ref_y",
    "com_ref_z",
    "com_est_x",
    "com_est_y",
    "com_est_z",
    "yaw",
    "pitch",
    "roll",
    "yaw_est",
    "pitch_est",
    "roll_est",
    "thrust_0",
    "thrust_1",
    "thrust_2",
    "thrust_3",
    "thrust_est_0",
    "thrust_est_1",
    "thrust_est_2",
    "thrust_est_3",
    "throttle_0",
    "throttle_1",
    "throttle_2",
    "throttle_3",
    "joint_0",
    "joint_1",
    "joint_2",
    "joint_3",
    "contact",
    "mpc_iterations",
    "mpc_status",
    "shutdown_reason",
];

fn phase_name(f: &TelemetryFrame) -> String {
    serde_json::to_value(f.phase).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

pub fn write_csv<W: Write>(frames: impl IntoIterator<Item = TelemetryFrame>, out: W) -> Result<u64, LogError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| LogError::Io(e.into());
    w.write_record(CSV_HEADER).map_err(io)?;
    let mut n = 0;
    for f in frames {
        let mut row: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
        row.push(f.t.to_string());
        row.push(phase_name(&f));
        row.push(f.alpha.to_string());
        for v in f.com.iter().chain(&f.com_ref).chain(&f.com_est).chain(&f.euler).chain(&f.euler_est) {
            row.push(v.to_string());
        }
        row.extend(f.jets.iter().map(|j| j.thrust.to_string()));
        row.extend(f.jets.iter().map(|j| j.thrust_est.to_string()));
        row.extend(f.jets.iter().map(|j| j.throttle.to_string()));
        row.extend(f.joints.iter().map(|v| v.to_string()));
        row.push((f.contact as u8).to_string());
        row.push(f.mpc.iterations.to_string());
        row.push(f.mpc.status.and_then(|s| serde_json::to_value(s).ok()).and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
        row.push(f.shutdown_reason.clone().unwrap_or_default());
        w.write_record(&row).map_err(io)?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Converts a log file to CSV, returning the number of rows.
pub fn export_csv(log: &Path, csv_path: &Path) -> Result<u64, LogError> {
    let reader = FlightLogReader::open(log)?;
    let frames: Vec<TelemetryFrame> = reader.collect::<Result<_, _>>()?;
    write_csv(frames, BufWriter::new(File::create(csv_path)?))
}
