//! Scenario files.
//!
//! A scenario is a TOML document. Units are SI throughout (s, m, rad, N).
//!
//! ```toml
//! schema_version = 1
//! name = "takeoff"
//! duration = 48.0          # s of simulated time
//! seed = 7                 # sensor noise seed
//! robot = "robot.toml"     # optional, relative to this file; reference robot otherwise
//!
//! [schedule]
//! ramp_rate = 0.04         # alpha per second
//! orientation_limit = 0.52 # rad
//!
//! [noise]                  # sensor noise, see NoiseConfig
//! [sim]                    # contact and joint servo, see SimParams
//! [mpc]                    # horizon, limits and weights, see MpcParams
//!
//! [[events]]
//! t = 0.0
//! cmd = "arm"
//!
//! [[events]]
//! t = 30.0
//! cmd = "set_reference"
//! z_offset = 1.0           # or: trajectory = "square"
//!
//! [[trajectories]]
//! id = "square"
//! waypoints = [[0.0, 0.0, 0.0, 0.0], [5.0, 0.5, 0.0, 0.0]]  # [t, dx, dy, dz]
//! ```

use std::path::{Path, PathBuf};

use jetstack_core::model::RobotModel;
use jetstack_core::mpc::MpcParams;
use jetstack_core::sim::{NoiseConfig, SimParams};
use serde::{Deserialize, Serialize};

use crate::protocol::CommandKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("--set {0}: expected key=value")]
    Override(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// alpha per second once take-off starts
    pub ramp_rate: f64,
    /// rad, largest tolerated Euler error before auto-shutdown
    pub orientation_limit: f64,
    /// rad, (yaw, pitch, roll)
    pub desired_euler: [f64; 3],
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { ramp_rate: 0.04, orientation_limit: 0.52, desired_euler: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: CommandKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub id: String,
    /// `[t, dx, dy, dz]` relative to the activation time and CoM reference.
    pub waypoints: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetryConfig {
    /// One streamed frame per this many 1 ms ticks.
    pub decimation: u64,
    /// Include wall-clock solve times; makes logs non-reproducible.
    pub record_timing: bool,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self { decimation: 100, record_timing: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// s
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub robot: Option<PathBuf>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default)]
    pub mpc: MpcParams,
    #[serde(default)]
    pub telemetry: TelemetryConfig,
    #[serde(default)]
    pub events: Vec<ScheduledEvent>,
    #[serde(default)]
    pub trajectories: Vec<TrajectoryConfig>,
}

impl ScenarioConfig {
    /// Minimal scenario: reference robot, nominal noise, no events.
    pub fn new(name: &str, duration: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            duration,
            seed: 0,
            robot: None,
            schedule: ScheduleConfig::default(),
            noise: NoiseConfig::default(),
            sim: SimParams::default(),
            mpc: MpcParams::default(),
            telemetry: TelemetryConfig::default(),
            events: Vec::new(),
            trajectories: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err("duration must be positive".into());
        }
        let s = &self.schedule;
        if !(s.ramp_rate.is_finite() && s.ramp_rate >= 0.0) {
            return Err("schedule.ramp_rate must be >= 0".into());
        }
        if !(s.orientation_limit > 0.0) {
            return Err("schedule.orientation_limit must be positive".into());
        }
        if self.telemetry.decimation == 0 {
            return Err("telemetry.decimation must be >= 1".into());
        }
        self.noise.validate().map_err(|e| e.to_string())?;
        self.mpc.validate().map_err(|e| e.to_string())?;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.t.is_finite() && e.t >= 0.0) {
                return Err(format!("events[{i}].t must be >= 0"));
            }
            e.kind.validate().map_err(|m| format!("events[{i}]: {m}"))?;
            if let CommandKind::SetReference { trajectory: Some(id), .. } = &e.kind {
                if self.trajectory(id).is_none() {
                    return Err(format!("events[{i}]: unknown trajectory {id:?}"));
                }
            }
        }
        for t in &self.trajectories {
            if t.waypoints.is_empty() {
                return Err(format!("trajectory {:?} has no waypoints", t.id));
            }
            if t.waypoints.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                return Err(format!("trajectory {:?}: times must increase", t.id));
            }
        }
        Ok(())
    }

    pub fn trajectory(&self, id: &str) -> Option<&TrajectoryConfig> {
        self.trajectories.iter().find(|t| t.id == id)
    }
}

/// A parsed scenario together with the robot it flies.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: RobotModel,
    pub source: Option<PathBuf>,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, ConfigError> {
        let invalid = |message| ConfigError::Invalid { path: PathBuf::from("<inline>"), message };
        config.validate().map_err(invalid)?;
        let model = match &config.robot {
            Some(p) => RobotModel::load(p).map_err(|e| invalid(e.to_string()))?,
            None => RobotModel::reference(),
        };
        Ok(Self { config, model, source: None })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut config = parse_scenario(&text, path, overrides)?;
        let invalid = |message| ConfigError::Invalid { path: path.into(), message };
        config.validate().map_err(invalid)?;
        if let Some(robot) = &config.robot {
            let base = path.parent().unwrap_or(Path::new("."));
            config.robot = Some(base.join(robot));
        }
        let model = match &config.robot {
            Some(p) => RobotModel::load(p).map_err(|e| invalid(e.to_string()))?,
            None => RobotModel::reference(),
        };
        Ok(Self { config, model, source: Some(path.into()) })
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses scenario text, applying `key.path=value` overrides first.
pub fn parse_scenario(text: &str, path: &Path, overrides: &[String]) -> Result<ScenarioConfig, ConfigError> {
    let parse_err = |text: &str, e: toml::de::Error| ConfigError::Parse {
        path: path.into(),
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    };
    if overrides.is_empty() {
        return toml::from_str(text).map_err(|e| parse_err(text, e));
    }
    let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_err(text, e))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let merged = toml::to_string(&table).map_err(|e| ConfigError::Override(e.to_string()))?;
    toml::from_str(&merged).map_err(|e| {
        let mut err = parse_err(&merged, e);
        if let ConfigError::Parse { message, .. } = &mut err {
            message.push_str(" (after --set overrides)");
        }
        err
    })
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a string.
pub fn apply_override(table: &mut toml::Table, expr: &str) -> Result<(), ConfigError> {
    let (key, raw) = expr.split_once('=').ok_or_else(|| ConfigError::Override(expr.into()))?;
    let keys: Vec<&str> = key.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(expr.into()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.into()));
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        let entry = node.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| ConfigError::Override(format!("{expr}: {k} is not a table")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
