//! Telemetry and command records.
//!
//! Both directions are UTF-8, one JSON object per line.
//!
//! Server to client, tagged by `"type"`:
//! - `{"type":"telemetry", "schema":1, "tick":..., "t":..., ...}`, see [`TelemetryFrame`]
//! - `{"type":"ack", "cmd":"arm", "accepted":true, "phase":"spool", "reason":null, ...}`
//!
//! Client to server, tagged by `"cmd"`:
//! - `{"cmd":"arm"}`
//! - `{"cmd":"start_takeoff"}`
//! - `{"cmd":"set_reference","z_offset":1.0}` or `{"cmd":"set_reference","trajectory":"square"}`
//! - `{"cmd":"abort"}`
//!
//! Commands may carry an `"id"` which is echoed in the ack.

use jetstack_core::mpc::{FlightPhase, MpcDiagnostics};
use serde::{Deserialize, Serialize};

/// Version tag carried by every telemetry frame and log header.
pub const TELEMETRY_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum CommandKind {
    Arm,
    StartTakeoff,
    SetReference {
        /// m, added to the current CoM reference height
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z_offset: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trajectory: Option<String>,
    },
    Abort,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Arm => "arm",
            CommandKind::StartTakeoff => "start_takeoff",
            CommandKind::SetReference { .. } => "set_reference",
            CommandKind::Abort => "abort",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if let CommandKind::SetReference { z_offset, trajectory } = self {
            match (z_offset, trajectory) {
                (Some(z), None) if z.is_finite() => {}
                (None, Some(_)) => {}
                _ => return Err("set_reference needs exactly one of z_offset or trajectory".into()),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorCommand {
    #[serde(flatten)]
    pub kind: CommandKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    /// s, simulated time at which the scheduler took the command
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_received: Option<f64>,
}

impl OperatorCommand {
    pub fn new(kind: CommandKind) -> Self {
        Self { kind, id: None, t_received: None }
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let cmd: OperatorCommand = serde_json::from_str(line).map_err(|e| e.to_string())?;
        cmd.kind.validate()?;
        Ok(cmd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandAck {
    pub cmd: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub t: f64,
    pub accepted: bool,
    /// Phase after the command.
    pub phase: FlightPhase,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JetFrame {
    /// N, simulator truth
    pub thrust: f64,
    /// N, estimator output
    pub thrust_est: f64,
    /// %
    pub throttle: f64,
    /// rev/min
    pub rpm: f64,
}

/// One 1 ms sample of the flight. Euler angles are (yaw, pitch, roll) in rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub schema: u32,
    pub tick: u64,
    /// s
    pub t: f64,
    pub phase: FlightPhase,
    pub alpha: f64,
    pub com: [f64; 3],
    pub euler: [f64; 3],
    pub com_est: [f64; 3],
    pub euler_est: [f64; 3],
    /// Pose filter covariance diagonal: position, rotation, velocity,
    /// angular velocity.
    pub pose_var: [f64; 12],
    pub com_ref: [f64; 3],
    pub euler_ref: [f64; 3],
    /// m, `com - com_ref`
    pub tracking_error: [f64; 3],
    /// rad
    pub joints: [f64; 4],
    pub joint_ref: [f64; 4],
    pub jets: [JetFrame; 4],
    pub mpc: MpcDiagnostics,
    pub contact: bool,
    pub shutdown_reason: Option<String>,
    pub logging_disabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerRecord {
    Telemetry(TelemetryFrame),
    Ack(CommandAck),
}
